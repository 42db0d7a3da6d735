"""Decompose a fitted model into centered mains and orthogonalized pairs.

Raw per-component functions are regrouped sums of trees. Purification
projects each pair surface, evaluated on the training rows, onto an additive
spline fit in its two variables; the fitted additive part moves into the
main effects and the intercept, leaving pair components that an additive
spline regression can no longer explain. Mains are then centered to zero
training mean. The decomposition preserves every prediction exactly.
"""
from __future__ import annotations

import csv
import json
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import Dataset, SplineBasis, basis_matrix, quantile_knots
from .model import FittedModel
from .trees import ModelBasedTree, predict_tree
from .util import fmt_float


@dataclass
class BasisTerm:
    """A spline function: fixed basis with fitted coefficients."""

    basis: SplineBasis
    coefficients: np.ndarray

    def evaluate(self, x: np.ndarray) -> np.ndarray:
        return basis_matrix(self.basis, x) @ self.coefficients


@dataclass
class MainEffect:
    """One variable's component: its trees plus transferred spline terms."""

    var: int
    trees: list[tuple[ModelBasedTree, float]] = field(default_factory=list)
    added: list[BasisTerm] = field(default_factory=list)
    constant: float = 0.0  # subtracted so the training mean is zero

    def evaluate(self, x: np.ndarray) -> np.ndarray:
        out = np.zeros(len(x), dtype=np.float64)
        for tree, scale in self.trees:
            out += scale * predict_tree(tree, x, x)
        for term in self.added:
            out += term.evaluate(x)
        return out - self.constant


@dataclass
class PairEffect:
    """One pair's component: its trees minus the transferred additive part."""

    vars: tuple[int, int]  # (j, k), j < k
    trees: list[tuple[ModelBasedTree, float]] = field(default_factory=list)
    removed_j: list[BasisTerm] = field(default_factory=list)
    removed_k: list[BasisTerm] = field(default_factory=list)
    constant: float = 0.0  # subtracted

    def evaluate(self, xj: np.ndarray, xk: np.ndarray) -> np.ndarray:
        j, _ = self.vars
        out = np.zeros(len(xj), dtype=np.float64)
        for tree, scale in self.trees:
            if tree.model_var == j:
                out += scale * predict_tree(tree, xj, xk)
            else:
                out += scale * predict_tree(tree, xk, xj)
        for term in self.removed_j:
            out -= term.evaluate(xj)
        for term in self.removed_k:
            out -= term.evaluate(xk)
        return out - self.constant


@dataclass
class EffectSet:
    """Additive decomposition of a fitted model.

    ``intercept + sum(mains) + sum(pairs)`` reproduces the model's link-scale
    predictions row for row. ``importances`` is filled by :func:`importance`.
    """

    intercept: float
    mains: dict[int, MainEffect]
    pairs: dict[tuple[int, int], PairEffect]
    names: tuple[str, ...]
    importances: list[dict] | None = None


def assemble_raw_effects(model: FittedModel) -> EffectSet:
    """Group the model's trees into per-variable and per-pair components."""
    mains: dict[int, MainEffect] = {}
    pairs: dict[tuple[int, int], PairEffect] = {}
    for _, _, tree, scale in model.iter_trees():
        if tree.is_main:
            eff = mains.setdefault(tree.model_var, MainEffect(var=tree.model_var))
            eff.trees.append((tree, scale))
        else:
            key = tuple(sorted((tree.model_var, tree.split_var)))
            eff = pairs.setdefault(key, PairEffect(vars=key))
            eff.trees.append((tree, scale))
    return EffectSet(
        intercept=model.offset,
        mains=mains,
        pairs=pairs,
        names=model.feature_names,
    )


def purify_effects(effects: EffectSet, train: Dataset, nknots: int) -> EffectSet:
    """Move every pair's additive spline part into the mains; center mains.

    For each pair the surface values on the training rows are regressed (one
    simultaneous least-squares fit) on an intercept plus spline bases of both
    variables with ``nknots`` quantile knots; the fit migrates out of the
    pair. Applying the function twice changes nothing: the leftover pair
    residuals are orthogonal to those bases by construction.
    """
    out = EffectSet(
        intercept=effects.intercept,
        mains={
            j: MainEffect(var=j, trees=list(m.trees), added=list(m.added),
                          constant=m.constant)
            for j, m in effects.mains.items()
        },
        pairs={
            key: PairEffect(vars=key, trees=list(p.trees),
                            removed_j=list(p.removed_j),
                            removed_k=list(p.removed_k), constant=p.constant)
            for key, p in effects.pairs.items()
        },
        names=effects.names,
    )
    bases = {j: quantile_knots(train.column(j), nknots) for j in
             sorted({v for key in out.pairs for v in key})}

    for key in sorted(out.pairs):
        j, k = key
        pair = out.pairs[key]
        xj = train.column(j)
        xk = train.column(k)
        surface = pair.evaluate(xj, xk)
        bj, bk = bases[j], bases[k]
        dj = basis_matrix(bj, xj)
        dk = basis_matrix(bk, xk)
        design = np.hstack([np.ones((train.n, 1)), dj, dk])
        # the hat columns of each variable sum to the intercept column, so the
        # system is rank-deficient by construction; SVD least squares picks
        # the minimum-norm solution and the fitted values stay unique
        coef, *_ = np.linalg.lstsq(design, surface, rcond=None)
        b0 = float(coef[0])
        term_j = BasisTerm(bj, np.array(coef[1 : 1 + bj.size]))
        term_k = BasisTerm(bk, np.array(coef[1 + bj.size :]))
        pair.removed_j.append(term_j)
        pair.removed_k.append(term_k)
        pair.constant += b0
        out.intercept += b0
        out.mains.setdefault(j, MainEffect(var=j)).added.append(term_j)
        out.mains.setdefault(k, MainEffect(var=k)).added.append(term_k)

    for j in sorted(out.mains):
        main = out.mains[j]
        c = float(np.mean(main.evaluate(train.column(j))))
        main.constant += c
        out.intercept += c
    return out


def importance(effects: EffectSet, train: Dataset) -> list[dict]:
    """Per-component importances: population std over the training rows.

    Returns records sorted descending by value and stores them on
    ``effects.importances``.
    """
    rows: list[dict] = []
    for j in sorted(effects.mains):
        vals = effects.mains[j].evaluate(train.column(j))
        rows.append(
            {"kind": "main", "vars": (j,), "name": effects.names[j],
             "value": float(np.std(vals))}
        )
    for (j, k) in sorted(effects.pairs):
        vals = effects.pairs[(j, k)].evaluate(train.column(j), train.column(k))
        rows.append(
            {
                "kind": "pair",
                "vars": (j, k),
                "name": f"{effects.names[j]}:{effects.names[k]}",
                "value": float(np.std(vals)),
            }
        )
    rows.sort(key=lambda r: (-r["value"], r["vars"]))
    effects.importances = rows
    return rows


# ---------------------------------------------------------------------------
# exports
# ---------------------------------------------------------------------------

def _safe(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.-]", "_", name)


def export_effect_grids(
    effects: EffectSet,
    train: Dataset,
    out_dir: str | Path,
    grid_size: int = 64,
    slice_quantiles: tuple[float, ...] = (0.1, 0.5, 0.9),
) -> dict:
    """Write per-component grids plus an index JSON; returns the index.

    Per main effect: ``main_<name>.csv`` with columns x,value over a
    ``grid_size``-point grid spanning the training range. Per pair:
    ``pair_<a>__<b>.csv`` in long form (x_j,x_k,value over the full lattice)
    and ``pair_<a>__<b>_slices.csv`` holding one curve in x_j per quantile of
    x_k. ``index.json`` lists every component with its importance.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if effects.importances is None:
        importance(effects, train)
    imp = {tuple(r["vars"]): r["value"] for r in effects.importances}

    def grid_for(j: int) -> np.ndarray:
        x = train.column(j)
        return np.linspace(float(x.min()), float(x.max()), grid_size)

    components = []
    for j in sorted(effects.mains):
        name = effects.names[j]
        grid = grid_for(j)
        vals = effects.mains[j].evaluate(grid)
        fname = f"main_{_safe(name)}.csv"
        with open(out_dir / fname, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x", "value"])
            for x, v in zip(grid, vals):
                w.writerow([fmt_float(x), fmt_float(v)])
        components.append(
            {"kind": "main", "name": name, "file": fname,
             "importance": imp[(j,)]}
        )

    for (j, k) in sorted(effects.pairs):
        nj, nk = effects.names[j], effects.names[k]
        pair = effects.pairs[(j, k)]
        gj = grid_for(j)
        gk = grid_for(k)
        xj_flat = np.repeat(gj, grid_size)
        xk_flat = np.tile(gk, grid_size)
        vals = pair.evaluate(xj_flat, xk_flat)
        stem = f"pair_{_safe(nj)}__{_safe(nk)}"
        grid_file = f"{stem}.csv"
        with open(out_dir / grid_file, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x_j", "x_k", "value"])
            for a, b, v in zip(xj_flat, xk_flat, vals):
                w.writerow([fmt_float(a), fmt_float(b), fmt_float(v)])
        slices_file = f"{stem}_slices.csv"
        qs = list(slice_quantiles)
        xk_cuts = np.quantile(train.column(k), qs)
        with open(out_dir / slices_file, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x_j", "x_k_quantile", "x_k_value", "value"])
            for q, cut in zip(qs, xk_cuts):
                curve = pair.evaluate(gj, np.full(grid_size, cut))
                for a, v in zip(gj, curve):
                    w.writerow([fmt_float(a), fmt_float(q), fmt_float(cut), fmt_float(v)])
        components.append(
            {
                "kind": "pair",
                "names": [nj, nk],
                "grid_file": grid_file,
                "slices_file": slices_file,
                "slice_quantiles": qs,
                "importance": imp[(j, k)],
            }
        )

    index = {
        "intercept": effects.intercept,
        "grid_size": grid_size,
        "components": components,
    }
    (out_dir / "index.json").write_text(json.dumps(index, sort_keys=True, indent=1) + "\n")
    return index


def write_importance_csv(effects: EffectSet, train: Dataset, path: str | Path) -> None:
    """Importance table as CSV: kind,component,importance (descending)."""
    rows = effects.importances or importance(effects, train)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["kind", "component", "importance"])
        for r in rows:
            w.writerow([r["kind"], r["name"], fmt_float(r["value"])])
