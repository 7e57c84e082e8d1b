"""Tabular data ingestion, response standardization and empirical split grids.

Everything downstream (trees, priors, the sampler) consumes the three
immutable products of this module: a ``DataMatrix``, a ``SplitGrid`` of
candidate split values per column, and ``EmpiricalMarginals`` holding the
exact left-mass counts of every candidate split. All three are safe to share
across concurrent chains.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .errors import DataError

MISSING_TOKENS = frozenset({"", "na", "n/a", "nan", "null", "none"})


@dataclass(frozen=True)
class DataMatrix:
    """Covariate table plus response vector.

    Attributes
    ----------
    x : np.ndarray
        (n, p) float64 covariate matrix, no missing entries.
    y : np.ndarray
        (n,) float64 response.
    column_names : tuple of str
        One label per covariate column.
    """

    x: np.ndarray
    y: np.ndarray
    column_names: tuple[str, ...]

    def __post_init__(self):
        # the compiled kernels require C-contiguous float64
        object.__setattr__(self, "x",
                           np.ascontiguousarray(self.x, dtype=np.float64))
        object.__setattr__(self, "y",
                           np.ascontiguousarray(self.y, dtype=np.float64))
        if self.x.ndim != 2:
            raise DataError("covariate matrix must be 2-dimensional")
        n, p = self.x.shape
        if n < 2:
            raise DataError(f"need at least 2 rows, got {n}")
        if p < 1:
            raise DataError("need at least 1 covariate column")
        if self.y.shape != (n,):
            raise DataError("response length does not match covariate rows")
        if len(self.column_names) != p:
            raise DataError("column_names length does not match covariates")
        if not (np.isfinite(self.x).all() and np.isfinite(self.y).all()):
            raise DataError("non-finite entries in data")

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def p(self) -> int:
        return self.x.shape[1]


@dataclass(frozen=True)
class StandardizationParams:
    """Parameters of the response transform (and per-column x statistics).

    Only y is transformed; the x statistics are recorded for reporting but
    never applied, because split-based trees are invariant to monotone
    per-column rescaling.
    """

    y_mean: float
    y_scale: float
    x_means: np.ndarray
    x_scales: np.ndarray

    def __post_init__(self):
        if not self.y_scale > 0:
            raise DataError("y_scale must be positive")

    def inverse_y(self, y_std):
        """Map standardized response values back to the original scale."""
        return np.asarray(y_std) * self.y_scale + self.y_mean


@dataclass(frozen=True)
class SplitGrid:
    """Candidate split values per column: midpoints of adjacent distinct
    sorted values, so every candidate strictly separates data mass.

    Columns with fewer than two distinct values get an empty grid and are
    flagged unsplittable.
    """

    values: tuple[np.ndarray, ...]

    @property
    def p(self) -> int:
        return len(self.values)

    def splittable(self) -> np.ndarray:
        """Indices of columns that admit at least one split."""
        return np.array([j for j, v in enumerate(self.values) if v.size > 0],
                        dtype=np.int64)

    def is_splittable(self, j: int) -> bool:
        return self.values[j].size > 0

    def size(self, j: int) -> int:
        """Number of candidate splits |A_j| for column j."""
        return int(self.values[j].size)

    def index_of(self, j: int, s: float) -> int:
        """Locate split value s inside A_j, or raise."""
        grid = self.values[j]
        i = int(np.searchsorted(grid, s))
        if i >= grid.size or grid[i] != s:
            raise DataError(f"split value {s!r} not in grid of column {j}")
        return i


@dataclass(frozen=True)
class EmpiricalMarginals:
    """Exact left-mass counts #{i : x_ij <= s} for every candidate split.

    Counts are stored as integers so downstream leverage computations stay
    exact rationals for as long as possible.
    """

    n: int
    grid: SplitGrid
    left_counts: tuple[np.ndarray, ...]

    def left_count(self, j: int, s: float) -> int:
        return int(self.left_counts[j][self.grid.index_of(j, s)])


def load_csv(path, response_column, categorical=()):
    """Load a comma-delimited UTF-8 file with a header row into a DataMatrix.

    Rows containing missing cells (empty or NA-like tokens) are dropped.
    Covariate columns whose values do not all parse as numbers, or that are
    listed in ``categorical``, are one-hot encoded into 0/1 columns (one per
    distinct value, original column dropped).

    Raises DataError for a missing file, an absent or non-numeric response
    column, or zero usable rows.
    """
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            try:
                header = next(reader)
            except StopIteration:
                raise DataError(f"{path}: empty file") from None
            raw_rows = [row for row in reader if row]
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc

    header = [h.strip() for h in header]
    if response_column not in header:
        raise DataError(f"response not found: {response_column!r}")
    unknown = set(categorical) - set(header)
    if unknown:
        raise DataError(f"categorical columns not in header: {sorted(unknown)}")

    width = len(header)
    rows = []
    for row in raw_rows:
        if len(row) != width:
            raise DataError(f"{path}: row with {len(row)} fields, expected {width}")
        cells = [c.strip() for c in row]
        if any(c.lower() in MISSING_TOKENS for c in cells):
            continue
        rows.append(cells)
    if not rows:
        raise DataError(f"{path}: zero usable rows after dropping missing values")

    y_idx = header.index(response_column)
    try:
        y = np.array([float(r[y_idx]) for r in rows])
    except ValueError:
        raise DataError(f"response column {response_column!r} is not numeric") from None

    columns: list[np.ndarray] = []
    names: list[str] = []
    for j, name in enumerate(header):
        if j == y_idx:
            continue
        raw = [r[j] for r in rows]
        numeric = None
        if name not in categorical:
            try:
                numeric = np.array([float(v) for v in raw])
            except ValueError:
                numeric = None
        if numeric is not None:
            columns.append(numeric)
            names.append(name)
        else:
            for level in sorted(set(raw)):
                columns.append(np.array([1.0 if v == level else 0.0 for v in raw]))
                names.append(f"{name}={level}")

    if not columns:
        raise DataError(f"{path}: no covariate columns")
    x = np.column_stack(columns)
    if len(rows) < 2:
        raise DataError(f"{path}: need at least 2 usable rows, got {len(rows)}")
    return DataMatrix(x=x, y=y, column_names=tuple(names))


def standardize(d: DataMatrix):
    """Center and scale the response to mean 0, population sd 1.

    Covariates are left untouched (their means/scales are recorded only).
    Returns the transformed DataMatrix and the parameters of the exact
    inverse transform. A constant response is an error: its scale is zero.
    """
    y_mean = float(np.mean(d.y))
    y_scale = float(np.std(d.y))  # population (1/n) convention
    if y_scale == 0.0:
        raise DataError("response is constant; cannot standardize")
    params = StandardizationParams(
        y_mean=y_mean,
        y_scale=y_scale,
        x_means=d.x.mean(axis=0),
        x_scales=d.x.std(axis=0),
    )
    out = DataMatrix(x=d.x, y=(d.y - y_mean) / y_scale,
                     column_names=d.column_names)
    return out, params


def build_split_grid(d: DataMatrix) -> SplitGrid:
    """Candidate splits per column: midpoints of adjacent distinct values.

    Duplicates are collapsed before the midpoints are formed, so each
    candidate has nonzero data mass strictly on both sides.
    """
    grids = []
    for j in range(d.p):
        u = np.unique(d.x[:, j])
        if u.size < 2:
            grids.append(np.empty(0))
        else:
            grids.append((u[1:] + u[:-1]) / 2.0)
    return SplitGrid(values=tuple(grids))


def build_marginals(d: DataMatrix, grid: SplitGrid) -> EmpiricalMarginals:
    """Left-mass counts of every candidate split of every column."""
    counts = []
    for j in range(d.p):
        col = np.sort(d.x[:, j])
        counts.append(np.searchsorted(col, grid.values[j], side="right").astype(np.int64))
    return EmpiricalMarginals(n=d.n, grid=grid, left_counts=tuple(counts))


def prepare(d: DataMatrix):
    """Convenience: split grid plus marginals in one call."""
    grid = build_split_grid(d)
    return grid, build_marginals(d, grid)


def left_mass(m: EmpiricalMarginals, j: int, s: float) -> Fraction:
    """Exact empirical mass mu_{n,j}{X_j <= s} as a rational number.

    s must be one of the column's candidate splits; grid construction
    guarantees the result lies strictly inside (0, 1).
    """
    return Fraction(m.left_count(j, s), m.n)


def kfold_split(n: int, k: int, seed: int):
    """Deterministic k-fold partition of range(n).

    Returns k (train_indices, validation_indices) pairs; fold sizes differ
    by at most one and the validation sets partition range(n).
    """
    if not 2 <= k <= n:
        raise DataError(f"k must be in [2, {n}], got {k}")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    folds = np.array_split(perm, k)
    out = []
    for i, val in enumerate(folds):
        train = np.concatenate([f for j, f in enumerate(folds) if j != i])
        out.append((np.sort(train), np.sort(val)))
    return out
