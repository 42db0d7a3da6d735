"""Greedy boosting stages with patience-based early stopping and rollback.

Both stages share one engine: each iteration grows one candidate tree per
entry in the candidate list against the current pseudo-response, accepts the
candidate with the smallest weighted SSE, and scales it into the running
predictions. The stage stops when the validation loss recorded ``patience``
iterations ago is no worse than anything after it, then drops those trailing
trees and restores the matching prediction snapshots.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset
from .losses import grad_hess, mean_loss
from .trees import DesignCache, ModelBasedTree, TreeParams, grow_tree, predict_tree
from .util import pmap


@dataclass
class StageResult:
    """Outcome of one boosting stage.

    ``validation_curve[m]`` is the validation loss after ``m`` accepted
    iterations; index 0 holds the pre-stage loss, so the curve is one longer
    than the number of iterations run. After rollback ``trees`` has exactly
    ``stop_iterations`` entries.
    """

    trees: list[tuple[ModelBasedTree, float]]
    stop_iterations: int
    validation_curve: list[float]
    candidate_sse: list[list[float]] | None = None


@dataclass(frozen=True)
class StageParams:
    """Knobs for one stage run (tree shape plus boosting schedule)."""

    tree: TreeParams
    max_iterations: int = 1000
    learning_rate: float = 0.2
    patience: int = 10
    threads: int = 1
    debug: bool = False


def _run_stage(
    train: Dataset,
    valid: Dataset,
    g_train: np.ndarray,
    g_valid: np.ndarray,
    candidates: list[tuple[int, int]],
    params: StageParams,
    cache: DesignCache,
):
    """Shared boosting loop; returns (StageResult, g_train, g_valid)."""
    task = train.task
    lam = params.learning_rate
    d = params.patience
    y_train = train.target
    y_valid = valid.target

    curve = [mean_loss(y_valid, g_valid, task)]
    trees: list[tuple[ModelBasedTree, float]] = []
    all_sse: list[list[float]] | None = [] if params.debug else None
    # snapshots of (g_train, g_valid) after each of the last `patience`
    # iterations; snaps[0] always matches iteration m - len(snaps) + 1 ... m
    snaps: deque[tuple[np.ndarray, np.ndarray]] = deque(maxlen=d + 1)
    snaps.append((g_train.copy(), g_valid.copy()))

    if not candidates:
        return StageResult(trees, 0, curve, all_sse), g_train, g_valid

    stop_at = None
    for m in range(1, params.max_iterations + 1):
        lg = grad_hess(y_train, g_train, task)

        def grow_one(pair):
            mv, sv = pair
            return grow_tree(mv, sv, train, lg.z, lg.hess, params.tree, cache)

        grown = pmap(grow_one, candidates, params.threads)
        sses = [s for _, s in grown]
        if all_sse is not None:
            all_sse.append(list(sses))
        best = 0
        for i in range(1, len(grown)):
            # strict tie on SSE resolved toward the smaller (model, split)
            if sses[i] < sses[best] or (
                sses[i] == sses[best] and candidates[i] < candidates[best]
            ):
                best = i
        tree = grown[best][0]
        trees.append((tree, lam))

        g_train = g_train + lam * predict_tree(
            tree, train.column(tree.model_var), train.column(tree.split_var)
        )
        g_valid = g_valid + lam * predict_tree(
            tree, valid.column(tree.model_var), valid.column(tree.split_var)
        )
        curve.append(mean_loss(y_valid, g_valid, task))
        snaps.append((g_train, g_valid))

        if m >= d:
            bench = curve[m - d]
            if bench <= min(curve[m - d + 1 :]):
                stop_at = m - d
                break

    if stop_at is None:
        stop_iterations = len(trees)
    else:
        # curve keeps the full history so the stop decision stays inspectable
        stop_iterations = stop_at
        del trees[stop_iterations:]
        g_train, g_valid = snaps[0]

    return StageResult(trees, stop_iterations, curve, all_sse), g_train, g_valid


def fit_main_stage(
    train: Dataset,
    valid: Dataset,
    g_train: np.ndarray,
    g_valid: np.ndarray,
    params: StageParams,
    cache: DesignCache | None = None,
):
    """Boost main-effect trees (one candidate per predictor).

    Returns ``(StageResult, g_train, g_valid)`` with the predictions advanced
    past the accepted trees (rolled back past the dropped ones).
    """
    if cache is None:
        cache = DesignCache(train, params.tree.max_bins, static_weights=False)
    candidates = [(j, j) for j in range(train.p)]
    return _run_stage(train, valid, g_train, g_valid, candidates, params, cache)


def fit_interaction_stage(
    train: Dataset,
    valid: Dataset,
    g_train: np.ndarray,
    g_valid: np.ndarray,
    combos: list[tuple[int, int]],
    params: StageParams,
    cache: DesignCache | None = None,
):
    """Boost interaction trees over screened (model, split) combinations.

    ``combos`` normally holds both orientations of each screened pair. An
    empty list is a valid input and stops immediately with zero iterations.
    """
    if cache is None:
        cache = DesignCache(train, params.tree.max_bins, static_weights=False)
    for mv, sv in combos:
        if mv == sv:
            raise ValueError(f"interaction combo ({mv}, {sv}) models its split variable")
    return _run_stage(train, valid, g_train, g_valid, list(combos), params, cache)
