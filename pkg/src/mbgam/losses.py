"""Per-row loss derivatives and the weighted pseudo-response.

Each boosting iteration fits trees to the pseudo-response z = -G/H under row
weights H, where G and H are the first and second derivatives of the loss at
the current prediction. The binary Hessian is floored so z stays finite.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Task

EPS_HESSIAN = 1e-6


@dataclass(frozen=True)
class LossGrad:
    """Derivatives of the loss at the current predictions."""

    grad: np.ndarray   # dl/dg per row
    hess: np.ndarray   # d2l/dg2 per row, floored to EPS_HESSIAN for binary
    z: np.ndarray      # pseudo-response -grad/hess


def _sigmoid(g: np.ndarray) -> np.ndarray:
    out = np.empty_like(g)
    pos = g >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-g[pos]))
    eg = np.exp(g[~pos])
    out[~pos] = eg / (1.0 + eg)
    return out


def init_offset(y: np.ndarray, task: Task) -> float:
    """Constant model the boosting starts from.

    Mean response for the continuous task; log-odds of the mean for the
    binary task (which requires both classes to be present).
    """
    y = np.asarray(y, dtype=np.float64)
    m = float(np.mean(y))
    if task is Task.CONTINUOUS:
        return m
    if m <= 0.0 or m >= 1.0:
        raise ValueError("binary target has a single class; log-odds undefined")
    return float(np.log(m / (1.0 - m)))


def grad_hess(y: np.ndarray, g: np.ndarray, task: Task) -> LossGrad:
    """First/second loss derivatives and pseudo-response at predictions g."""
    y = np.asarray(y, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    if task is Task.CONTINUOUS:
        grad = 2.0 * (g - y)
        hess = np.full_like(g, 2.0)
        z = y - g
    else:
        p = _sigmoid(g)
        grad = p - y
        hess = np.maximum(p * (1.0 - p), EPS_HESSIAN)
        z = (y - p) / hess
    return LossGrad(grad=grad, hess=hess, z=z)


def mean_loss(y: np.ndarray, g: np.ndarray, task: Task) -> float:
    """Mean loss at predictions g; stable for |g| well past 700."""
    y = np.asarray(y, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    if task is Task.CONTINUOUS:
        return float(np.mean((y - g) ** 2))
    # log(1 + exp(g)) - y*g, evaluated as max(g, 0) + log1p(exp(-|g|)) - y*g
    per_row = np.maximum(g, 0.0) + np.log1p(np.exp(-np.abs(g))) - y * g
    return float(np.mean(per_row))
