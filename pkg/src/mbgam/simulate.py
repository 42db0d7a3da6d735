"""Synthetic benchmark scenarios with known interaction structure.

Thirty predictors in two independent blocks (x1..x20 and x21..x30), each
block equicorrelated Gaussian built from a shared factor, truncated to
[-2.5, 2.5]. Four response surfaces mix quadratic, threshold, clipped, and
oscillatory terms on the first ten predictors; the rest stay pure noise.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .data import Dataset, Task

N_VARS = 30
BLOCKS = ((0, 20), (20, 30))
CLIP = 2.5
NOISE_SD = 0.5
MODEL_IDS = (1, 2, 3, 4)


@dataclass(frozen=True)
class SimScenario:
    """One data-generating configuration."""

    model_id: int
    n: int
    rho: float
    task: Task
    seed: int = 0

    def __post_init__(self):
        if self.model_id not in MODEL_IDS:
            raise ValueError(f"model_id must be one of {MODEL_IDS}")
        if not 0.0 <= self.rho < 1.0:
            raise ValueError("rho must be in [0, 1)")
        if self.n < 4:
            raise ValueError("n must be >= 4")


def gen_predictors(scenario: SimScenario) -> np.ndarray:
    """Draw the (n, 30) predictor matrix for a scenario.

    Within each block every pair of columns has correlation ``rho`` before
    truncation: column = sqrt(rho) * shared + sqrt(1 - rho) * own noise.
    """
    rng = np.random.default_rng([scenario.seed, 0])
    n = scenario.n
    rho = scenario.rho
    X = np.empty((n, N_VARS), order="F")
    for lo, hi in BLOCKS:
        shared = rng.standard_normal(n)
        own = rng.standard_normal((n, hi - lo))
        X[:, lo:hi] = math.sqrt(rho) * shared[:, None] + math.sqrt(1.0 - rho) * own
    np.clip(X, -CLIP, CLIP, out=X)
    return X


def _clip(v: np.ndarray, lo: float, hi: float) -> np.ndarray:
    return np.clip(v, lo, hi)


def _base(X: np.ndarray) -> np.ndarray:
    """Shared additive part: linear, quadratic, and hinge mains on x1..x10."""
    x = [X[:, j] for j in range(10)]
    g = x[0] + x[1] + x[2] + x[3] + x[4]
    g = g + 0.5 * (x[5] ** 2 + x[6] ** 2 + x[7] ** 2)
    g = g + x[8] * (x[8] > 0) + x[9] * (x[9] > 0)
    return g


def eval_model_form(model_id: int, X: np.ndarray) -> np.ndarray:
    """Noise-free response surface at the given predictor rows."""
    if model_id not in MODEL_IDS:
        raise ValueError(f"model_id must be one of {MODEL_IDS}")
    x = [X[:, j] for j in range(10)]
    if model_id == 1:
        g = _base(X)
        for j in range(10):
            for k in range(j + 1, 10):
                g = g + 0.2 * x[j] * x[k]
        return g
    if model_id == 2:
        g = _base(X)
        g = g + 0.25 * x[0] * x[1]
        g = g + 0.25 * x[0] * x[2] ** 2
        g = g + 0.25 * x[3] ** 2 * x[4] ** 2
        g = g + np.exp(x[3] * x[5] / 3.0)
        g = g + x[4] * x[5] * (x[4] > 0) * (x[5] > 0)
        g = g + _clip(x[6] + x[7], -1.0, 0.0)
        g = g + _clip(x[6] * x[8], -1.0, 1.0)
        g = g + 1.0 * (x[7] > 0) * (x[8] > 0)
        return g
    if model_id == 3:
        g = _base(X)
        g = g + 0.25 * x[0] ** 2 * x[1] ** 2
        g = g + 2.0 * np.maximum(x[2] - 0.5, 0.0) * np.maximum(x[3] - 0.5, 0.0)
        g = g + 0.5 * np.sin(np.pi * x[4]) * np.sin(np.pi * x[5])
        g = g + 0.5 * np.sin(np.pi * (x[6] + x[7]))
        return g
    g = _base(X)
    g = g + x[0] * x[1] + x[0] * x[2] + x[1] * x[2] + 0.5 * x[0] * x[1] * x[2]
    g = g + x[3] * x[4] + x[3] * x[5] + x[4] * x[5]
    g = g + 0.5 * (x[3] > 0) * x[4] * x[5]
    return g


def true_pairs(model_id: int) -> list[tuple[int, int]]:
    """0-based index pairs that genuinely interact (pairwise-detectable)."""
    if model_id == 1:
        return [(j, k) for j in range(10) for k in range(j + 1, 10)]
    if model_id == 2:
        return [(0, 1), (0, 2), (3, 4), (3, 5), (4, 5), (6, 7), (6, 8), (7, 8)]
    if model_id == 3:
        return [(0, 1), (2, 3), (4, 5), (6, 7)]
    if model_id == 4:
        return [(0, 1), (0, 2), (1, 2), (3, 4), (3, 5), (4, 5)]
    raise ValueError(f"model_id must be one of {MODEL_IDS}")


def balanced_intercept(g: np.ndarray, tol: float = 1e-6) -> float:
    """Bisect the intercept that balances mean sigmoid(b0 + g) at one half."""
    g = np.asarray(g, dtype=np.float64)

    def mean_prob(b0: float) -> float:
        v = b0 + g
        p = np.where(v >= 0, 1.0 / (1.0 + np.exp(-np.minimum(v, 700))),
                     np.exp(np.maximum(v, -700)) / (1.0 + np.exp(np.maximum(v, -700))))
        return float(np.mean(p))

    lo, hi = -20.0, 20.0
    if mean_prob(lo) > 0.5 or mean_prob(hi) < 0.5:
        raise ValueError("balanced intercept does not bracket within [-20, 20]")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if abs(mean_prob(mid) - 0.5) <= tol:
            return mid
        if mean_prob(mid) < 0.5:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def gen_response(g: np.ndarray, scenario: SimScenario) -> tuple[np.ndarray, float | None]:
    """Draw the response for a scenario; returns (y, balanced intercept).

    Continuous: y = g + N(0, 0.5^2) and the intercept slot is None. Binary:
    Bernoulli draws at sigmoid(b0 + g) with b0 balancing the sample mean
    probability at 0.5 within 1e-6.
    """
    rng = np.random.default_rng([scenario.seed, 1])
    g = np.asarray(g, dtype=np.float64)
    if scenario.task is Task.CONTINUOUS:
        return g + NOISE_SD * rng.standard_normal(len(g)), None
    b0 = balanced_intercept(g)
    v = b0 + g
    p = np.where(v >= 0, 1.0 / (1.0 + np.exp(-np.minimum(v, 700))),
                 np.exp(np.maximum(v, -700)) / (1.0 + np.exp(np.maximum(v, -700))))
    y = (rng.random(len(g)) < p).astype(np.float64)
    return y, b0


def feature_names() -> tuple[str, ...]:
    return tuple(f"x{j + 1}" for j in range(N_VARS))


def make_dataset(scenario: SimScenario) -> tuple[Dataset, float | None]:
    """Full simulated dataset plus the balanced intercept (binary only)."""
    X = gen_predictors(scenario)
    g = eval_model_form(scenario.model_id, X)
    y, b0 = gen_response(g, scenario)
    return Dataset(feature_names(), X, y, scenario.task), b0


def scenario_splits(scenario: SimScenario):
    """(train, valid, test) datasets as a 50/25/25 row split, plus b0.

    Rows are drawn independently, so consecutive slices are already a
    random partition.
    """
    ds, b0 = make_dataset(scenario)
    n = scenario.n
    n_train = n // 2
    n_valid = (n - n_train) // 2
    a = np.arange(n)
    train = ds.take(a[:n_train])
    valid = ds.take(a[n_train : n_train + n_valid])
    test = ds.take(a[n_train + n_valid :])
    return train, valid, test, b0
