"""Model-based trees: binned gram accumulation, ridge/GCV leaf fits, growth.

A tree splits on one variable only, so every node covers a contiguous range
of that variable's bins and split candidates are evaluated from prefix sums
of per-bin gram matrices instead of per-row passes. Leaf models are ridge
fits over a fixed alpha grid selected by GCV, with an upper bound on the
normalized size of each slope coefficient.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import BinIndex, Dataset, SplineBasis, basis_matrix, make_bins, quantile_knots

_MIN_SUMW = 1e-8


@dataclass(frozen=True)
class NodeModel:
    """Ridge fit in one node; coefficients are [intercept, slopes...]."""

    coefficients: np.ndarray
    alpha: float
    df: float
    gcv: float
    sse: float


@dataclass
class TreeNode:
    """Internal node (threshold set) or leaf (model set)."""

    threshold: float | None = None
    left: "TreeNode | None" = None
    right: "TreeNode | None" = None
    model: NodeModel | None = None

    @property
    def is_leaf(self) -> bool:
        return self.model is not None


@dataclass(frozen=True)
class ModelBasedTree:
    """One boosted tree: splits on ``split_var``, models ``model_var``.

    For main-effect trees the two variables coincide and each leaf holds an
    intercept plus a raw linear term. Interaction trees split on one variable
    and model the other through ``basis`` (hat functions) when present.
    """

    model_var: int
    split_var: int
    root: TreeNode
    basis: SplineBasis | None
    depth: int

    @property
    def is_main(self) -> bool:
        return self.model_var == self.split_var


@dataclass(frozen=True)
class GramAccumulator:
    """Per-bin gram sums of the leaf design against the pseudo-response."""

    xtwx: np.ndarray   # (B, c, c)
    xtwz: np.ndarray   # (B, c)
    zwz: np.ndarray    # (B,)
    sumw: np.ndarray   # (B,)
    count: np.ndarray  # (B,) int64


@dataclass(frozen=True)
class TreeParams:
    """Everything a single grow_tree call needs beyond the data."""

    max_depth: int = 2
    min_leaf: int = 20
    alpha_grid: tuple[float, ...] = tuple(float(np.exp(k)) for k in range(-8, 1))
    max_coef: float = 1.0
    max_bins: int = 256
    nknots: int = 5


# ---------------------------------------------------------------------------
# gram accumulation
# ---------------------------------------------------------------------------

def design_columns(x: np.ndarray, basis: SplineBasis | None) -> np.ndarray:
    """Non-intercept design columns for the modeled variable."""
    if basis is None:
        return np.asarray(x, dtype=np.float64).reshape(-1, 1)
    return basis_matrix(basis, x)


def _static_parts(d: np.ndarray, b: np.ndarray, B: int, w: np.ndarray, banded: bool):
    """Per-bin XtWX, sum of weights, and row counts (z-independent)."""
    m = d.shape[1]
    c = m + 1
    xtwx = np.zeros((B, c, c))
    sumw = np.bincount(b, weights=w, minlength=B)
    count = np.bincount(b, minlength=B).astype(np.int64)
    xtwx[:, 0, 0] = sumw
    wd = w[:, None] * d
    for a in range(m):
        col = np.bincount(b, weights=wd[:, a], minlength=B)
        xtwx[:, 0, a + 1] = col
        xtwx[:, a + 1, 0] = col
        for bb in range(a, m):
            if banded and bb - a > 1:
                continue  # hat functions two apart never overlap
            cross = np.bincount(b, weights=wd[:, a] * d[:, bb], minlength=B)
            xtwx[:, a + 1, bb + 1] = cross
            xtwx[:, bb + 1, a + 1] = cross
    return xtwx, sumw, count


def _dynamic_parts(d: np.ndarray, b: np.ndarray, B: int, w: np.ndarray, z: np.ndarray):
    """Per-bin XtWz and zWz (change every boosting iteration)."""
    m = d.shape[1]
    wz = w * z
    xtwz = np.zeros((B, m + 1))
    xtwz[:, 0] = np.bincount(b, weights=wz, minlength=B)
    for a in range(m):
        xtwz[:, a + 1] = np.bincount(b, weights=wz * d[:, a], minlength=B)
    zwz = np.bincount(b, weights=wz * z, minlength=B)
    return xtwz, zwz


def build_grams(
    x_model: np.ndarray,
    z: np.ndarray,
    w: np.ndarray,
    bins: BinIndex,
    basis: SplineBasis | None = None,
    rows: np.ndarray | None = None,
) -> GramAccumulator:
    """Accumulate per-bin gram sums of the leaf design over ``bins``."""
    d = design_columns(x_model, basis)
    b = bins.assignment
    z = np.asarray(z, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    if rows is not None:
        d, b, z, w = d[rows], b[rows], z[rows], w[rows]
    B = bins.n_bins
    xtwx, sumw, count = _static_parts(d, b, B, w, banded=basis is not None)
    xtwz, zwz = _dynamic_parts(d, b, B, w, z)
    return GramAccumulator(xtwx=xtwx, xtwz=xtwz, zwz=zwz, sumw=sumw, count=count)


# ---------------------------------------------------------------------------
# ridge / GCV path
# ---------------------------------------------------------------------------

@dataclass
class _RidgeBatch:
    beta: np.ndarray   # (..., c)
    alpha: np.ndarray  # (...,)
    df: np.ndarray     # (...,)
    gcv: np.ndarray    # (...,)
    sse: np.ndarray    # (...,)

    def node_model(self, i) -> NodeModel:
        return NodeModel(
            coefficients=np.array(self.beta[i], dtype=np.float64),
            alpha=float(self.alpha[i]),
            df=float(self.df[i]),
            gcv=float(self.gcv[i]),
            sse=float(self.sse[i]),
        )


def _ridge_core_2x2(
    xtwx: np.ndarray, xtwz: np.ndarray, alphas: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Closed-form ridge solutions for the two-column design.

    Returns (beta, df, solvable) with shapes (..., A, 2), (..., A), (..., A).
    Avoids LAPACK entirely; the systems here are 2x2 and dominate the main
    effect stages, so the explicit inverse is worth the special case.
    """
    a = xtwx[..., 0, 0][..., None]
    b = xtwx[..., 0, 1][..., None]
    x11 = xtwx[..., 1, 1][..., None]
    d = x11 + alphas
    r0 = xtwz[..., 0][..., None]
    r1 = xtwz[..., 1][..., None]
    with np.errstate(divide="ignore", invalid="ignore"):
        det = a * d - b * b
        i00 = d / det
        i01 = -b / det
        i11 = a / det
        beta = np.stack([i00 * r0 + i01 * r1, i01 * r0 + i11 * r1], axis=-1)
        df = i00 * a + 2.0 * i01 * b + i11 * x11
    solvable = np.isfinite(beta).all(axis=-1) & np.isfinite(df)
    beta = np.where(solvable[..., None], beta, 0.0)
    df = np.where(solvable, df, 0.0)
    return beta, df, solvable


def _ridge_core_eigh(
    xtwx: np.ndarray, xtwz: np.ndarray, alphas: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Ridge solutions across the alpha grid from one eigendecomposition.

    Eliminating the unpenalized intercept leaves (S + alpha*I) systems on the
    centered gram S, so a single symmetric eigendecomposition per item covers
    every alpha; df follows from the same eigenvalues as
    1 + sum(lambda / (lambda + alpha)).

    Returns (beta, df, solvable) with shapes (..., A, c), (..., A), (..., A).
    """
    c = xtwx.shape[-1]
    a0 = xtwx[..., 0, 0]
    pos = a0 > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        inv_a = np.where(pos, 1.0 / np.where(pos, a0, 1.0), np.inf)
    b = xtwx[..., 0, 1:]  # (..., c-1)
    S = xtwx[..., 1:, 1:] - (b[..., :, None] * b[..., None, :]) * np.where(
        pos, inv_a, 0.0
    )[..., None, None]
    okS = pos & np.isfinite(S).all(axis=(-2, -1))
    if not okS.all():
        S = np.where(okS[..., None, None], S, np.eye(c - 1))
    try:
        lam, Q = np.linalg.eigh(S)
    except np.linalg.LinAlgError:
        # convergence failures are batch-fatal in eigh; redo item by item
        flat = S.reshape(-1, c - 1, c - 1)
        lam = np.zeros(flat.shape[:2])
        Q = np.zeros_like(flat)
        okf = okS.reshape(-1).copy()
        for i in range(len(flat)):
            try:
                lam[i], Q[i] = np.linalg.eigh(flat[i])
            except np.linalg.LinAlgError:
                okf[i] = False
        lam = lam.reshape(S.shape[:-1])
        Q = Q.reshape(S.shape)
        okS = okS & okf.reshape(okS.shape)
    r0 = xtwz[..., 0]
    with np.errstate(divide="ignore", invalid="ignore"):
        rr = xtwz[..., 1:] - b * (r0 * inv_a)[..., None]
        u = np.matmul(np.swapaxes(Q, -1, -2), rr[..., None])[..., 0]
        scale = 1.0 / (lam[..., None, :] + alphas[:, None])  # (..., A, c-1)
        br = np.matmul(Q[..., None, :, :], (u[..., None, :] * scale)[..., None])[..., 0]
        beta0 = (r0[..., None] - (br * b[..., None, :]).sum(axis=-1)) * inv_a[..., None]
    beta = np.concatenate([beta0[..., None], br], axis=-1)  # (..., A, c)
    df = 1.0 + (lam[..., None, :] * scale).sum(axis=-1)
    solvable = okS[..., None] & np.isfinite(beta).all(axis=-1) & np.isfinite(df)
    beta = np.where(solvable[..., None], beta, 0.0)
    df = np.where(solvable, df, 0.0)
    return beta, df, solvable


def ridge_path(
    xtwx: np.ndarray,
    xtwz: np.ndarray,
    zwz: np.ndarray,
    sumw: np.ndarray,
    count: np.ndarray,
    alpha_grid,
    max_coef: float,
) -> _RidgeBatch:
    """Ridge fits over an alpha grid with GCV selection, batched.

    Leading dimensions of the inputs are preserved. Per item: fit every
    alpha (intercept unpenalized), drop fits whose normalized slope
    magnitude |beta_c| * sd_c exceeds ``max_coef``, and keep the surviving
    alpha with the smallest GCV(alpha) = n * SSE / (n - df)^2. If every
    alpha violates the bound the largest alpha wins; if no alpha is solvable
    the node degenerates to a constant fit.
    """
    xtwx = np.asarray(xtwx, dtype=np.float64)
    lead = xtwx.shape[:-2]
    c = xtwx.shape[-1]
    alphas = np.sort(np.asarray(tuple(alpha_grid), dtype=np.float64))
    A = len(alphas)
    xtwz = np.asarray(xtwz, dtype=np.float64).reshape(*lead, c)
    zwz = np.asarray(zwz, dtype=np.float64).reshape(lead)
    sumw = np.asarray(sumw, dtype=np.float64).reshape(lead)
    count = np.asarray(count, dtype=np.float64).reshape(lead)

    if c == 2:
        beta, df, solvable = _ridge_core_2x2(xtwx, xtwz, alphas)
    else:
        beta, df, solvable = _ridge_core_eigh(xtwx, xtwz, alphas)

    xb = np.matmul(xtwx[..., None, :, :], beta[..., :, None])[..., 0]
    sse = (
        zwz[..., None]
        - 2.0 * (beta * xtwz[..., None, :]).sum(axis=-1)
        + (beta * xb).sum(axis=-1)
    )
    sse = np.maximum(sse, 0.0)

    denom = count[..., None] - df
    with np.errstate(divide="ignore", invalid="ignore"):
        gcv = np.where(denom > 1e-9, count[..., None] * sse / (denom * denom), np.inf)
    gcv = np.where(np.isfinite(gcv), gcv, np.inf)

    # normalized slope sizes from in-node weighted moments of each column
    with np.errstate(divide="ignore", invalid="ignore"):
        mu = np.where(sumw[..., None] > 0, xtwx[..., 0, 1:] / sumw[..., None], 0.0)
        ex2 = np.where(
            sumw[..., None] > 0,
            xtwx.diagonal(axis1=-2, axis2=-1)[..., 1:] / sumw[..., None],
            0.0,
        )
    sd = np.sqrt(np.maximum(ex2 - mu * mu, 0.0))  # (..., c-1)
    normed = np.abs(beta[..., 1:]) * sd[..., None, :]  # (..., A, c-1)
    feasible = solvable & (normed <= max_coef).all(axis=-1)

    picked = np.where(feasible, gcv, np.inf)
    any_feasible = feasible.any(axis=-1)
    idx_best = np.argmin(picked, axis=-1)  # first minimum -> smallest alpha
    # all alphas violate max_coef: fall back to the largest solvable alpha
    rev_first = np.argmax(solvable[..., ::-1], axis=-1)
    idx_fallback = A - 1 - rev_first
    idx = np.where(any_feasible, idx_best, idx_fallback)

    take = lambda arr: np.take_along_axis(arr, idx[..., None], axis=-1)[..., 0]
    out_beta = np.take_along_axis(beta, idx[..., None, None], axis=-2)[..., 0, :]
    out = _RidgeBatch(
        beta=out_beta,
        alpha=alphas[idx],
        df=take(df),
        gcv=take(gcv),
        sse=take(sse),
    )

    # nothing solvable at any alpha: constant-only node
    dead = ~solvable.any(axis=-1)
    if dead.any():
        with np.errstate(divide="ignore", invalid="ignore"):
            mean_z = np.where(sumw > 0, xtwz[..., 0] / np.where(sumw > 0, sumw, 1.0), 0.0)
        const_sse = np.maximum(zwz - sumw * mean_z * mean_z, 0.0)
        const_df = np.where(sumw > 0, 1.0, 0.0)
        cd = count - const_df
        with np.errstate(divide="ignore", invalid="ignore"):
            const_gcv = np.where(cd > 1e-9, count * const_sse / (cd * cd), np.inf)
        out.beta = np.where(dead[..., None], 0.0, out.beta)
        np.copyto(out.beta[..., 0], mean_z, where=dead)
        out.alpha = np.where(dead, alphas[-1], out.alpha)
        out.df = np.where(dead, const_df, out.df)
        out.gcv = np.where(dead, const_gcv, out.gcv)
        out.sse = np.where(dead, const_sse, out.sse)
    return out


def ridge_fit(
    xtwx: np.ndarray,
    xtwz: np.ndarray,
    zwz: float,
    sumw: float,
    count: int,
    alpha_grid,
    max_coef: float,
) -> NodeModel:
    """Single-node ridge/GCV fit from aggregated gram quantities."""
    batch = ridge_path(
        xtwx[None, :, :],
        np.asarray(xtwz, dtype=np.float64)[None, :],
        np.array([zwz]),
        np.array([sumw]),
        np.array([count], dtype=np.float64),
        alpha_grid,
        max_coef,
    )
    return batch.node_model(0)


# ---------------------------------------------------------------------------
# growth
# ---------------------------------------------------------------------------

class _Prefix:
    """Prefix sums of gram arrays along the bin axis."""

    def __init__(self, acc: GramAccumulator):
        def pad(a):
            out = np.zeros((a.shape[0] + 1, *a.shape[1:]), dtype=np.float64)
            np.cumsum(a, axis=0, out=out[1:])
            return out

        self.xtwx = pad(acc.xtwx)
        self.xtwz = pad(acc.xtwz)
        self.zwz = pad(acc.zwz)
        self.sumw = pad(acc.sumw)
        self.count = pad(acc.count.astype(np.float64))

    def slab(self, lo, hi):
        """Aggregates over bin range [lo, hi); lo/hi may be arrays."""
        lo = np.asarray(lo)
        hi = np.asarray(hi)
        return (
            self.xtwx[hi] - self.xtwx[lo],
            self.xtwz[hi] - self.xtwz[lo],
            self.zwz[hi] - self.zwz[lo],
            self.sumw[hi] - self.sumw[lo],
            self.count[hi] - self.count[lo],
        )


def _fit_range(prefix: _Prefix, lo, hi, params: TreeParams) -> _RidgeBatch:
    return ridge_path(*prefix.slab(lo, hi), params.alpha_grid, params.max_coef)


def grow_tree(
    model_var: int,
    split_var: int,
    ds: Dataset,
    z: np.ndarray,
    w: np.ndarray,
    params: TreeParams,
    cache: "DesignCache | None" = None,
    rows: np.ndarray | None = None,
) -> tuple[ModelBasedTree, float]:
    """Grow one model-based tree greedily; returns (tree, weighted SSE).

    Splits are placed at bin edges of ``split_var`` and scored by the drop in
    GCV relative to the node's own fit (children fitted from prefix/suffix
    gram sums). Growth stops at ``max_depth``, when no split lowers GCV, or
    when a child would fall under ``min_leaf`` rows; score ties go to the
    smaller threshold. The returned SSE is the weighted training SSE of the
    tree's pseudo-response fit, accumulated per leaf.
    """
    if cache is None:
        cache = DesignCache(ds, params.max_bins, static_weights=False)
    spline = model_var != split_var and params.nknots > 2
    basis = cache.basis(model_var, params.nknots) if spline else None
    bins = cache.bins(split_var)
    acc = cache.grams(model_var, split_var, z, w, basis, rows)
    prefix = _Prefix(acc)
    B = bins.n_bins
    edges = bins.edges
    min_leaf = params.min_leaf

    root_fit = _fit_range(prefix, 0, B, params)

    leaf_sse = 0.0
    max_depth_seen = 0

    def grow(lo: int, hi: int, depth: int, fit: _RidgeBatch, fit_i) -> TreeNode:
        nonlocal leaf_sse, max_depth_seen
        if depth < params.max_depth and hi - lo >= 2:
            ts = np.arange(lo + 1, hi)
            cl = prefix.count[ts] - prefix.count[lo]
            cr = prefix.count[hi] - prefix.count[ts]
            wl = prefix.sumw[ts] - prefix.sumw[lo]
            wr = prefix.sumw[hi] - prefix.sumw[ts]
            ok = (cl >= min_leaf) & (cr >= min_leaf) & (wl > _MIN_SUMW) & (wr > _MIN_SUMW)
            if ok.any():
                ts = ts[ok]
                left = _fit_range(prefix, np.full(len(ts), lo), ts, params)
                right = _fit_range(prefix, ts, np.full(len(ts), hi), params)
                parent_gcv = float(fit.gcv[fit_i]) if fit.gcv.ndim else float(fit.gcv)
                # score the split as one combined model over the parent's
                # rows: pooled SSE and df on the parent count keep the GCV
                # comparison on one scale
                n_node = prefix.count[hi] - prefix.count[lo]
                denom = n_node - (left.df + right.df)
                with np.errstate(divide="ignore", invalid="ignore"):
                    split_gcv = np.where(
                        denom > 1e-9,
                        n_node * (left.sse + right.sse) / (denom * denom),
                        np.inf,
                    )
                score = parent_gcv - split_gcv
                score = np.where(np.isnan(score), -np.inf, score)
                b = int(np.argmax(score))  # first max -> smaller threshold
                if score[b] > 0.0:
                    t = int(ts[b])
                    node = TreeNode(threshold=float(edges[t - 1]))
                    node.left = grow(lo, t, depth + 1, left, b)
                    node.right = grow(t, hi, depth + 1, right, b)
                    return node
        model = fit.node_model(fit_i) if fit.gcv.ndim else fit.node_model(())
        leaf_sse += model.sse
        max_depth_seen = max(max_depth_seen, depth)
        return TreeNode(model=model)

    root = grow(0, B, 0, root_fit, ())
    tree = ModelBasedTree(
        model_var=model_var,
        split_var=split_var,
        root=root,
        basis=basis,
        depth=max_depth_seen,
    )
    return tree, float(leaf_sse)


def predict_tree(tree: ModelBasedTree, x_model: np.ndarray, x_split: np.ndarray) -> np.ndarray:
    """Evaluate a tree on raw columns (basis inputs clamp to the knot range)."""
    x_model = np.asarray(x_model, dtype=np.float64)
    x_split = np.asarray(x_split, dtype=np.float64)
    d = design_columns(x_model, tree.basis)
    out = np.empty(len(x_model), dtype=np.float64)

    def walk(node: TreeNode, idx: np.ndarray):
        if node.is_leaf:
            coef = node.model.coefficients
            out[idx] = coef[0] + d[idx] @ coef[1:]
            return
        goes_left = x_split[idx] <= node.threshold
        walk(node.left, idx[goes_left])
        walk(node.right, idx[~goes_left])

    walk(tree.root, np.arange(len(x_model)))
    return out


def predict_tree_on(tree: ModelBasedTree, ds: Dataset, col_map=None) -> np.ndarray:
    """predict_tree with columns pulled from a Dataset (optionally remapped)."""
    mv, sv = tree.model_var, tree.split_var
    if col_map is not None:
        mv, sv = col_map[mv], col_map[sv]
    return predict_tree(tree, ds.column(mv), ds.column(sv))


# ---------------------------------------------------------------------------
# per-dataset cache
# ---------------------------------------------------------------------------

class DesignCache:
    """Bins, bases, design columns, and static gram parts for one dataset.

    With ``static_weights=True`` (constant Hessian) the z-independent gram
    parts for a (model, split, basis) combination are computed once and
    reused across boosting iterations and rounds, which leaves only the
    XtWz / zWz accumulations on the per-iteration hot path. Static parts are
    never cached for row subsets.
    """

    def __init__(self, ds: Dataset, max_bins: int, static_weights: bool):
        self.ds = ds
        self.max_bins = max_bins
        self.static_weights = static_weights
        self._bins: dict[int, BinIndex] = {}
        self._bases: dict[tuple[int, int], SplineBasis] = {}
        self._designs: dict[tuple[int, int | None], np.ndarray] = {}
        self._static: dict[tuple, tuple] = {}

    def bins(self, j: int) -> BinIndex:
        if j not in self._bins:
            self._bins[j] = make_bins(self.ds.column(j), self.max_bins)
        return self._bins[j]

    def basis(self, j: int, nknots: int) -> SplineBasis:
        key = (j, nknots)
        if key not in self._bases:
            self._bases[key] = quantile_knots(self.ds.column(j), nknots)
        return self._bases[key]

    def design(self, j: int, basis: SplineBasis | None) -> np.ndarray:
        key = (j, None if basis is None else len(basis.knots))
        if key not in self._designs:
            self._designs[key] = design_columns(self.ds.column(j), basis)
        return self._designs[key]

    def grams(
        self,
        model_var: int,
        split_var: int,
        z: np.ndarray,
        w: np.ndarray,
        basis: SplineBasis | None,
        rows: np.ndarray | None = None,
    ) -> GramAccumulator:
        d = self.design(model_var, basis)
        bins = self.bins(split_var)
        b = bins.assignment
        B = bins.n_bins
        z = np.asarray(z, dtype=np.float64)
        w = np.asarray(w, dtype=np.float64)
        if rows is not None:
            d, b, z, w = d[rows], b[rows], z[rows], w[rows]
        banded = basis is not None
        key = (model_var, split_var, None if basis is None else len(basis.knots))
        if rows is None and self.static_weights:
            if key not in self._static:
                self._static[key] = _static_parts(d, b, B, w, banded)
            xtwx, sumw, count = self._static[key]
        else:
            xtwx, sumw, count = _static_parts(d, b, B, w, banded)
        xtwz, zwz = _dynamic_parts(d, b, B, w, z)
        return GramAccumulator(xtwx=xtwx, xtwz=xtwz, zwz=zwz, sumw=sumw, count=count)
