"""Identifiable binary-product trees.

A tree over a component S (a set of columns) splits each column in S once,
producing 2^|S| cells. The identifiability constraint (zero mean along every
axis under the empirical marginals) pins all cell heights up to one free
scalar beta: the height of cell v is beta times a multiplier that is a
product of per-column leverages. Leverages come from exact integer counts,
so the constraint holds by construction.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from fractions import Fraction

import numpy as np

from . import _kernels
from .dataset import DataMatrix, EmpiricalMarginals
from .errors import DataError

MAX_ORDER = 20  # 2^|S| cell table must stay addressable


@dataclass(frozen=True, eq=False)
class IdentifiableTree:
    """One component tree, parameterized by (S, s, beta).

    ``cols``/``splits`` are the array forms of S and s used by the kernels;
    ``left_counts`` are the exact split counts the leverages derive from;
    ``multipliers`` is the full cell table indexed by bitmask (bit k set
    means the row lies right of splits[k]). The all-left cell has
    multiplier 1, so its height is beta itself.
    """

    cols: np.ndarray        # int64, strictly increasing column indices
    splits: np.ndarray      # float64, one split value per column
    beta: float
    left_counts: np.ndarray  # int64, #{x_ij <= s_j} per column in S
    leverages: np.ndarray    # float64, -left/(n-left) per column in S
    multipliers: np.ndarray  # float64, 2^|S| cell table

    @property
    def S(self) -> tuple[int, ...]:
        return tuple(int(j) for j in self.cols)

    @property
    def s(self) -> tuple[float, ...]:
        return tuple(float(v) for v in self.splits)

    @property
    def order(self) -> int:
        return self.cols.size

    def with_beta(self, beta: float) -> "IdentifiableTree":
        return replace(self, beta=float(beta))


@dataclass(frozen=True)
class CellAssignment:
    """Per-row cell bitmasks and multipliers of one tree on one dataset.

    Valid only for the (S, s) it was computed from; the tree value at row i
    is beta * mult[i] whatever beta is.
    """

    masks: np.ndarray  # uint32
    mult: np.ndarray   # float64


def leverage(j: int, s_j: float, m: EmpiricalMarginals) -> float:
    """Per-column leverage -mu{X_j <= s}/mu{X_j > s}.

    Always negative, with magnitude in [1/(n-1), n-1] because grid
    candidates have mass strictly on both sides.
    """
    left = m.left_count(j, s_j)
    return -left / (m.n - left)


def height_multipliers(S, s, m: EmpiricalMarginals) -> np.ndarray:
    """Cell multiplier table for component S with splits s.

    Entry at bitmask v is the product of leverages over the set bits of v,
    so the all-left cell (mask 0) is 1 and every axis satisfies the
    zero-mean identifiability constraint.
    """
    d = len(S)
    if d > MAX_ORDER:
        raise DataError(f"component order {d} exceeds supported maximum {MAX_ORDER}")
    table = np.ones(1 << d)
    for k, (j, s_j) in enumerate(zip(S, s)):
        bit = 1 << k
        table[bit:2 * bit] = table[:bit] * leverage(j, s_j, m)
    return table


def build_tree(S, s, beta: float, m: EmpiricalMarginals) -> IdentifiableTree:
    """Construct a tree, deriving all cell heights from (S, s, beta).

    S must be strictly increasing splittable columns and every s_j a grid
    candidate of its column.
    """
    cols = np.asarray(S, dtype=np.int64)
    splits = np.asarray(s, dtype=np.float64)
    if cols.size == 0:
        raise DataError("component must contain at least one column")
    if cols.size > 1 and not (np.diff(cols) > 0).all():
        raise DataError("component columns must be strictly increasing")
    left = np.array([m.left_count(int(j), float(v)) for j, v in zip(cols, splits)],
                    dtype=np.int64)
    levs = -left / (m.n - left)
    table = height_multipliers(S, s, m)
    return IdentifiableTree(cols=cols, splits=splits, beta=float(beta),
                            left_counts=left, leverages=levs, multipliers=table)


def cell_mask(t: IdentifiableTree, x) -> int:
    """Bitmask of the cell containing covariate vector x.

    A value exactly equal to a split goes left (the split rule is strict
    'greater than').
    """
    x = np.asarray(x)
    mask = 0
    for k in range(t.order):
        if x[t.cols[k]] > t.splits[k]:
            mask |= 1 << k
    return mask


def evaluate(t: IdentifiableTree, x) -> float:
    """Tree value at a single covariate vector."""
    return t.beta * float(t.multipliers[cell_mask(t, x)])


def evaluate_matrix(t: IdentifiableTree, x: np.ndarray) -> np.ndarray:
    """Tree values for every row of an (m, p) covariate matrix."""
    return t.beta * _kernels.row_mults(x, t.cols, t.splits, t.leverages)


def assign_cells(t: IdentifiableTree, d: DataMatrix) -> CellAssignment:
    """Cache per-row masks and multipliers of t on the dataset's rows."""
    masks, mult = _kernels.row_cells(d.x, t.cols, t.splits, t.leverages)
    return CellAssignment(masks=masks, mult=mult)


def max_abs_multiplier(t: IdentifiableTree) -> float:
    """Largest |cell multiplier|; |tree| is bounded by |beta| times this."""
    return float(np.abs(t.multipliers).max())


def identifiability_residual(t: IdentifiableTree, m: EmpiricalMarginals) -> float:
    """Largest violation of the per-axis zero-mean constraint.

    For every axis k and every combination of the other coordinates, the
    stored multipliers must satisfy a_left * mu_left + a_right * mu_right = 0.
    The masses are exact rationals, the stored multipliers are floats, and
    each violation is reported relative to the magnitude of its two terms
    (capped below at 1) so the result is scale-free, like normalizing by
    beta. Used in tests only.
    """
    d = t.order
    worst = Fraction(0)
    for k in range(d):
        left = int(t.left_counts[k])
        mu_left = Fraction(left, m.n)
        mu_right = Fraction(m.n - left, m.n)
        bit = 1 << k
        for mask in range(1 << d):
            if mask & bit:
                continue
            term_l = Fraction(float(t.multipliers[mask])) * mu_left
            term_r = Fraction(float(t.multipliers[mask | bit])) * mu_right
            scale = max(Fraction(1), abs(term_l), abs(term_r))
            worst = max(worst, abs(term_l + term_r) / scale)
    return float(worst)


def tree_to_record(t: IdentifiableTree) -> dict:
    """JSON-ready record {S, s, beta}; heights are never serialized."""
    return {"S": list(t.S), "s": list(t.s), "beta": t.beta}


def tree_from_record(rec: dict, m: EmpiricalMarginals) -> IdentifiableTree:
    """Rebuild a tree from its record, re-deriving heights from the
    marginals so the identifiability constraint stays authoritative."""
    return build_tree(rec["S"], rec["s"], rec["beta"], m)
