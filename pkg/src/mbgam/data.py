"""Datasets, quantile binning, and linear spline bases.

Predictor columns are stored column-major so per-variable slices are
contiguous, and every structure here is frozen after construction so it can
be shared freely across worker threads.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np


class Task(Enum):
    """Prediction task; decides the loss and the link scale."""

    CONTINUOUS = "continuous"
    BINARY = "binary"


class DataError(ValueError):
    """Malformed input data: bad file, bad cell, or bad target."""


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Dataset:
    """Immutable numeric table with named predictors and one target.

    Parameters
    ----------
    names : tuple of str
        Predictor names, unique and nonempty.
    columns : ndarray of shape (n, p)
        Predictor values; stored in column-major order.
    target : ndarray of shape (n,)
        Response values. Must be {0, 1} under the binary task.
    task : Task
        Loss family the target is meant for.
    """

    names: tuple[str, ...]
    columns: np.ndarray
    target: np.ndarray
    task: Task

    def __post_init__(self):
        names = tuple(str(s) for s in self.names)
        cols = np.asfortranarray(np.asarray(self.columns, dtype=np.float64))
        y = np.ascontiguousarray(np.asarray(self.target, dtype=np.float64))
        if cols.ndim != 2:
            raise DataError("columns must be a 2-d array")
        n, p = cols.shape
        if n < 1:
            raise DataError("dataset needs at least one row")
        if len(names) != p:
            raise DataError(f"{len(names)} names for {p} columns")
        if len(set(names)) != p or any(s == "" for s in names):
            raise DataError("column names must be unique and nonempty")
        if y.shape != (n,):
            raise DataError("target length does not match column length")
        if not np.isfinite(cols).all():
            bad = np.argwhere(~np.isfinite(cols))[0]
            raise DataError(
                f"non-finite value in column {names[bad[1]]!r}, row {bad[0] + 1}"
            )
        if not np.isfinite(y).all():
            row = int(np.flatnonzero(~np.isfinite(y))[0])
            raise DataError(f"non-finite target in row {row + 1}")
        if self.task is Task.BINARY:
            ok = (y == 0.0) | (y == 1.0)
            if not ok.all():
                row = int(np.flatnonzero(~ok)[0])
                raise DataError(
                    f"binary target must be 0 or 1; row {row + 1} has {y[row]!r}"
                )
        object.__setattr__(self, "names", names)
        object.__setattr__(self, "columns", _frozen(cols))
        object.__setattr__(self, "target", _frozen(y))

    @property
    def n(self) -> int:
        return self.columns.shape[0]

    @property
    def p(self) -> int:
        return self.columns.shape[1]

    def column(self, j: int) -> np.ndarray:
        """Contiguous view of predictor ``j``."""
        return self.columns[:, j]

    def index_of(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise DataError(f"no column named {name!r}") from None

    def take(self, rows: np.ndarray) -> "Dataset":
        """Row subset as a new Dataset (original row order preserved by caller)."""
        return Dataset(self.names, self.columns[rows], self.target[rows], self.task)


def load_csv(path: str | Path, target: str, task: Task) -> Dataset:
    """Read a headered numeric CSV into a Dataset.

    Every cell must parse as a finite float; missing or non-numeric cells are
    rejected with their row and column named. ``target`` picks the response
    column, all remaining columns become predictors in file order.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"input file not found: {path}")
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        if target not in header:
            raise DataError(f"{path}: target column {target!r} not in header")
        ncol = len(header)
        rows: list[list[float]] = []
        for i, rec in enumerate(reader, start=1):
            if len(rec) != ncol:
                raise DataError(
                    f"{path}: row {i} has {len(rec)} cells, expected {ncol}"
                )
            try:
                vals = [float(c) for c in rec]
            except ValueError:
                for j, c in enumerate(rec):
                    try:
                        float(c)
                    except ValueError:
                        raise DataError(
                            f"{path}: row {i}, column {header[j]!r}: "
                            f"{c!r} is not numeric"
                        ) from None
                raise
            for j, v in enumerate(vals):
                if not math.isfinite(v):
                    raise DataError(
                        f"{path}: row {i}, column {header[j]!r}: "
                        f"{rec[j]!r} is not finite"
                    )
            rows.append(vals)
    if not rows:
        raise DataError(f"{path}: no data rows")
    mat = np.array(rows, dtype=np.float64)
    t = header.index(target)
    keep = [j for j in range(ncol) if j != t]
    names = tuple(header[j] for j in keep)
    try:
        return Dataset(names, mat[:, keep], mat[:, t], task)
    except DataError as e:
        raise DataError(f"{path}: {e}") from None


def split_train_valid(ds: Dataset, valid_fraction: float, seed: int):
    """Seeded row split into (train, valid); indices drawn over original rows.

    The validation part gets ``floor(n * valid_fraction)`` rows; both parts
    keep the original row order.
    """
    if not 0.0 < valid_fraction < 1.0:
        raise ValueError("valid_fraction must be in (0, 1)")
    n = ds.n
    n_valid = int(math.floor(n * valid_fraction))
    if n_valid < 1 or n - n_valid < 1:
        raise ValueError(f"split of {n} rows at {valid_fraction} leaves an empty part")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    valid_rows = np.sort(perm[:n_valid])
    train_rows = np.sort(perm[n_valid:])
    return ds.take(train_rows), ds.take(valid_rows)


@dataclass(frozen=True)
class BinIndex:
    """Right-closed quantile bins of one column.

    Bin ``b`` covers ``(edges[b-1], edges[b]]`` with open ends at both
    extremes, so ``assignment[i] == searchsorted(edges, x[i], side='left')``.
    """

    edges: np.ndarray       # (B-1,) strictly ascending
    assignment: np.ndarray  # (n,) int32 in [0, B)

    def __post_init__(self):
        object.__setattr__(self, "edges", _frozen(np.asarray(self.edges, dtype=np.float64)))
        object.__setattr__(self, "assignment", _frozen(np.asarray(self.assignment, dtype=np.int32)))

    @property
    def n_bins(self) -> int:
        return len(self.edges) + 1


def make_bins(x: np.ndarray, max_bins: int) -> BinIndex:
    """Quantile-bin a column into at most ``max_bins`` right-closed bins.

    When the column has no more than ``max_bins`` distinct values every
    distinct value gets its own bin, which makes the binned split search
    exhaustive. A constant column yields a single unsplittable bin.
    """
    if max_bins < 1:
        raise ValueError("max_bins must be >= 1")
    x = np.asarray(x, dtype=np.float64)
    distinct = np.unique(x)
    if len(distinct) <= max_bins:
        edges = distinct[:-1]
    else:
        qs = np.quantile(x, np.arange(1, max_bins) / max_bins)
        edges = np.unique(qs)
        # an edge at the column maximum would only add an empty top bin
        edges = edges[edges < distinct[-1]]
    assignment = np.searchsorted(edges, x, side="left").astype(np.int32)
    return BinIndex(edges, assignment)


@dataclass(frozen=True)
class SplineBasis:
    """Degree-1 B-spline (hat function) basis on strictly ascending knots."""

    knots: np.ndarray  # (K,), K >= 2

    def __post_init__(self):
        k = np.asarray(self.knots, dtype=np.float64)
        if k.ndim != 1 or len(k) < 2:
            raise ValueError("need at least two knots")
        if not (np.diff(k) > 0).all():
            raise ValueError("knots must be strictly ascending")
        object.__setattr__(self, "knots", _frozen(k))

    @property
    def size(self) -> int:
        return len(self.knots)


def quantile_knots(x: np.ndarray, nknots: int) -> SplineBasis:
    """Knots at ``nknots`` equally spaced quantiles, deduplicated.

    Includes the column min and max. If deduplication leaves fewer than two
    knots (a constant column) the basis degenerates to two knots spanning
    ``[min, min + 1]``.
    """
    if nknots < 2:
        raise ValueError("nknots must be >= 2")
    x = np.asarray(x, dtype=np.float64)
    knots = np.unique(np.quantile(x, np.linspace(0.0, 1.0, nknots)))
    if len(knots) < 2:
        knots = np.array([knots[0], knots[0] + 1.0])
    return SplineBasis(knots)


def basis_matrix(basis: SplineBasis, x: np.ndarray) -> np.ndarray:
    """Evaluate all hat functions at ``x`` (clamped to the knot range).

    Returns an (n, K) matrix whose rows sum to one; inputs outside the knot
    range are clamped to the boundary, so the basis extends each boundary
    value as a constant.
    """
    k = basis.knots
    K = len(k)
    x = np.asarray(x, dtype=np.float64)
    xc = np.clip(x, k[0], k[-1])
    idx = np.clip(np.searchsorted(k, xc, side="right") - 1, 0, K - 2)
    t = (xc - k[idx]) / (k[idx + 1] - k[idx])
    out = np.zeros((len(x), K))
    rows = np.arange(len(x))
    out[rows, idx] = 1.0 - t
    out[rows, idx + 1] += t
    return out


def eval_basis(basis: SplineBasis, x: float) -> np.ndarray:
    """Basis vector (length K) at a single point."""
    return basis_matrix(basis, np.array([float(x)]))[0]
