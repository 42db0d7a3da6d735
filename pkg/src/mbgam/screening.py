"""Interaction screening: ranking variable pairs on the current residuals.

The primary scorer grows one shallow interaction tree per orientation of a
pair and keeps the better (smaller) weighted SSE. A simpler baseline scorer
fits four constant regions split at one cut point per variable, searching
the full grid of bin-edge cut pairs through two-dimensional prefix sums.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import Dataset
from .losses import grad_hess
from .trees import DesignCache, TreeParams, grow_tree
from .util import fmt_float, pmap

# shallow spline trees regardless of the task of the boosting stages
FILTER_MAX_DEPTH = 2
FILTER_NKNOTS = 5


@dataclass(frozen=True)
class PairRanking:
    """Scored pairs and the oriented combinations handed to the next stage.

    ``scores`` maps each unordered pair (j < k) to min over both
    orientations of the tree SSE; ``top_pairs`` lists the ``q`` best pairs
    ascending (ties lexicographic); ``oriented`` holds the 2q (model, split)
    combinations: the top pairs followed by their reversals.
    """

    scores: dict[tuple[int, int], float]
    top_pairs: list[tuple[int, int]]
    oriented: list[tuple[int, int]]


def filter_interactions(
    train: Dataset,
    g: np.ndarray,
    q: int,
    params: TreeParams | None = None,
    cache: DesignCache | None = None,
    subsample: int | None = 1_000_000,
    seed: int = 0,
    threads: int = 1,
    pairs: list[tuple[int, int]] | None = None,
) -> PairRanking:
    """Rank all predictor pairs by shallow interaction trees on residuals.

    Fits, for every unordered pair {j, k}, one tree that splits on k and
    models j and one with the roles swapped, both against the pseudo-response
    at the current predictions ``g``; the pair score is the smaller SSE. Rows
    beyond ``subsample`` are dropped through a seeded draw before scoring.
    """
    if train.p < 2:
        raise ValueError("pair screening needs at least two predictors")
    if q < 1:
        raise ValueError("q must be >= 1")
    if params is None:
        params = TreeParams()
    params = TreeParams(
        max_depth=FILTER_MAX_DEPTH,
        min_leaf=params.min_leaf,
        alpha_grid=params.alpha_grid,
        max_coef=params.max_coef,
        max_bins=params.max_bins,
        nknots=FILTER_NKNOTS,
    )
    if cache is None:
        cache = DesignCache(train, params.max_bins, static_weights=False)

    rows = None
    if subsample is not None and train.n > subsample:
        rng = np.random.default_rng(seed)
        rows = np.sort(rng.choice(train.n, size=subsample, replace=False))

    lg = grad_hess(train.target, np.asarray(g, dtype=np.float64), train.task)

    if pairs is None:
        pairs = [(j, k) for j in range(train.p) for k in range(j + 1, train.p)]

    def score_pair(jk):
        j, k = jk
        _, sse_jk = grow_tree(j, k, train, lg.z, lg.hess, params, cache, rows)
        _, sse_kj = grow_tree(k, j, train, lg.z, lg.hess, params, cache, rows)
        return min(sse_jk, sse_kj)

    scored = pmap(score_pair, pairs, threads)
    scores = dict(zip(pairs, scored))
    order = sorted(scores, key=lambda p: (scores[p], p))
    top = order[: min(q, len(order))]
    oriented = list(top) + [(k, j) for j, k in top]
    return PairRanking(scores=scores, top_pairs=top, oriented=oriented)


def fast_score(
    train: Dataset,
    z: np.ndarray,
    w: np.ndarray,
    pair: tuple[int, int],
    cache: DesignCache | None = None,
    rows: np.ndarray | None = None,
) -> float:
    """Baseline pair score: best four-quadrant constant fit, weighted SSE.

    Searches every (cut_j, cut_k) combination over the bin edges of both
    variables using 2-d cumulative sums, fitting the weighted mean in each
    quadrant. A variable without edges (constant column) degenerates to a
    two-region fit on the other variable alone.
    """
    j, k = pair
    if j == k:
        raise ValueError("a pair needs two distinct variables")
    if cache is None:
        cache = DesignCache(train, TreeParams().max_bins, static_weights=False)
    bj = cache.bins(j)
    bk = cache.bins(k)
    z = np.asarray(z, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    aj = bj.assignment
    ak = bk.assignment
    if rows is not None:
        aj, ak, z, w = aj[rows], ak[rows], z[rows], w[rows]
    Bj, Bk = bj.n_bins, bk.n_bins

    flat = aj.astype(np.int64) * Bk + ak
    size = Bj * Bk
    sw = np.bincount(flat, weights=w, minlength=size).reshape(Bj, Bk)
    swz = np.bincount(flat, weights=w * z, minlength=size).reshape(Bj, Bk)
    total_wzz = float(np.sum(w * z * z))

    def padded_cumsum(a):
        out = np.zeros((Bj + 1, Bk + 1))
        np.cumsum(np.cumsum(a, axis=0), axis=1, out=out[1:, 1:])
        return out

    cw = padded_cumsum(sw)
    cz = padded_cumsum(swz)
    # cut after bin a on j and bin b on k; a == Bj means "no cut" (only used
    # when a variable has a single bin)
    cuts_j = np.arange(1, Bj) if Bj > 1 else np.array([Bj])
    cuts_k = np.arange(1, Bk) if Bk > 1 else np.array([Bk])
    ca = cuts_j[:, None]
    cb = cuts_k[None, :]

    def quadrants(c):
        q11 = c[ca, cb]
        q12 = c[ca, Bk] - q11
        q21 = c[Bj, cb] - q11
        q22 = c[Bj, Bk] - q11 - q12 - q21
        return q11, q12, q21, q22

    wq = quadrants(cw)
    zq = quadrants(cz)
    explained = np.zeros_like(wq[0])
    for wgt, num in zip(wq, zq):
        with np.errstate(divide="ignore", invalid="ignore"):
            contrib = np.where(wgt > 0, num * num / np.where(wgt > 0, wgt, 1.0), 0.0)
        explained += contrib
    sse = total_wzz - explained
    return float(np.min(sse))


def rank_pairs_fast(
    train: Dataset,
    g: np.ndarray,
    q: int,
    cache: DesignCache | None = None,
    subsample: int | None = 1_000_000,
    seed: int = 0,
    threads: int = 1,
) -> PairRanking:
    """Rank all pairs with the four-quadrant baseline scorer."""
    if train.p < 2:
        raise ValueError("pair screening needs at least two predictors")
    if cache is None:
        cache = DesignCache(train, TreeParams().max_bins, static_weights=False)
    rows = None
    if subsample is not None and train.n > subsample:
        rng = np.random.default_rng(seed)
        rows = np.sort(rng.choice(train.n, size=subsample, replace=False))
    lg = grad_hess(train.target, np.asarray(g, dtype=np.float64), train.task)
    pairs = [(j, k) for j in range(train.p) for k in range(j + 1, train.p)]
    scored = pmap(
        lambda p: fast_score(train, lg.z, lg.hess, p, cache, rows), pairs, threads
    )
    scores = dict(zip(pairs, scored))
    order = sorted(scores, key=lambda p: (scores[p], p))
    top = order[: min(q, len(order))]
    oriented = list(top) + [(k, j) for j, k in top]
    return PairRanking(scores=scores, top_pairs=top, oriented=oriented)


def ranking_to_csv(ranking: PairRanking, names, path: str | Path) -> None:
    """Write the full ranking (ascending SSE) as pair_j,pair_k,sse,rank."""
    order = sorted(ranking.scores, key=lambda p: (ranking.scores[p], p))
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["pair_j", "pair_k", "sse", "rank"])
        for r, (j, k) in enumerate(order, start=1):
            out.writerow([names[j], names[k], fmt_float(ranking.scores[(j, k)]), r])
