"""Prior distributions: component size and identity, split values, tree
height, noise variance, tree count, and the activity vector.

Every sampler has a matching evaluator (weights or log density) so
acceptance-ratio computations can be cross-checked against Monte Carlo
frequencies in tests.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, replace

import numpy as np
from scipy.special import gammainccinv

from .dataset import DataMatrix, SplitGrid
from .errors import ConfigError, DataError

LAMBDA_FLOOR = 1e-12


@dataclass(frozen=True)
class Hyperparams:
    """All prior constants.

    ``lam`` is the noise-scale parameter of the inverse-gamma prior
    IG(v/2, v*lam/2); leave it None to have it calibrated from ``q_lambda``
    (the prior mass placed below the least-squares residual variance).
    ``xi`` enables the truncated prior when set: retained draws must satisfy
    sup|f| <= xi and 1/xi <= sigma^2 <= xi.
    """

    alpha_split: float = 0.95
    gamma_split: float = 2.0
    sigma_beta2: float = 0.1
    v: float = 3.0
    lam: float | None = None
    q_lambda: float = 0.95
    C_star: float = 1e-2
    T_max: int = 200
    xi: float | None = None

    def validate(self):
        problems = []
        if not 0.0 < self.alpha_split < 1.0:
            problems.append(f"alpha_split must be in (0,1), got {self.alpha_split}")
        if not self.gamma_split > 0:
            problems.append(f"gamma_split must be > 0, got {self.gamma_split}")
        if not self.sigma_beta2 > 0:
            problems.append(f"sigma_beta2 must be > 0, got {self.sigma_beta2}")
        if not self.v > 0:
            problems.append(f"v must be > 0, got {self.v}")
        if self.lam is not None and not self.lam > 0:
            problems.append(f"lambda must be > 0, got {self.lam}")
        if not 0.0 < self.q_lambda < 1.0:
            problems.append(f"q_lambda must be in (0,1), got {self.q_lambda}")
        if not self.C_star > 0:
            problems.append(f"C_star must be > 0, got {self.C_star}")
        if not (isinstance(self.T_max, int) and self.T_max >= 1):
            problems.append(f"T_max must be a positive integer, got {self.T_max}")
        if self.xi is not None and not self.xi > 0:
            problems.append(f"xi must be > 0, got {self.xi}")
        if problems:
            raise ConfigError(problems)

    def warn_scaling(self, n: int):
        """T_max is advisory O(n); warn (never error) when it exceeds n."""
        if self.T_max > n:
            warnings.warn(
                f"T_max={self.T_max} exceeds n={n}; the theory assumes T_max = O(n)",
                stacklevel=2,
            )


def component_size_weights(p: int, h: Hyperparams) -> np.ndarray:
    """Normalized prior weights over component sizes d = 1..p.

    Weight d is proportional to (1 - p_split(d)) * prod_{l=1}^{d-1} p_split(l)
    with p_split(d) = alpha_split * (1+d)^(-gamma_split). Starting the
    product at l=1 rather than l=0 only changes a common factor that the
    normalization cancels. Computed in log space so large p cannot
    underflow the normalization.
    """
    if p < 1:
        raise DataError(f"need p >= 1, got {p}")
    d = np.arange(1, p + 1, dtype=np.float64)
    log_psplit = math.log(h.alpha_split) - h.gamma_split * np.log1p(d)
    log_w = np.log1p(-np.exp(log_psplit))
    log_w[1:] += np.cumsum(log_psplit)[:-1]
    log_w -= log_w.max()
    w = np.exp(log_w)
    return w / w.sum()


def sample_component(rng, w: np.ndarray, splittable: np.ndarray) -> tuple[int, ...]:
    """Draw a component: a size from w, then a uniform subset of the
    splittable columns of that size. ``w`` must have one weight per
    splittable column."""
    if splittable.size == 0:
        raise DataError("no splittable columns")
    if w.size != splittable.size:
        raise DataError("size weights length must equal number of splittable columns")
    d = 1 + rng.choice(w.size, p=w)
    cols = rng.choice(splittable, size=d, replace=False)
    return tuple(int(j) for j in np.sort(cols))


def sample_splits(rng, S, grid: SplitGrid) -> tuple[float, ...]:
    """Independent uniform draws from each selected column's candidate set."""
    out = []
    for j in S:
        values = grid.values[j]
        if values.size == 0:
            raise DataError(f"column {j} has no candidate splits")
        out.append(float(values[rng.integers(values.size)]))
    return tuple(out)


def sample_beta(rng, h: Hyperparams) -> float:
    """Diffuse Gaussian height prior N(0, sigma_beta2)."""
    return float(rng.standard_normal() * math.sqrt(h.sigma_beta2))


def draw_inv_gamma(rng, shape: float, scale: float) -> float:
    """IG(a, b) draw with density proportional to x^(-a-1) exp(-b/x),
    i.e. mean b/(a-1) for a > 1."""
    return float(scale / rng.gamma(shape))


def sample_sigma2(rng, h: Hyperparams) -> float:
    """Noise-variance prior IG(v/2, v*lambda/2)."""
    if h.lam is None:
        raise ConfigError(["lambda is unresolved; calibrate it first"])
    return draw_inv_gamma(rng, h.v / 2.0, h.v * h.lam / 2.0)


def t_prior_weights(n: int, h: Hyperparams) -> np.ndarray:
    """Normalized prior over the tree count t = 0..T_max,
    proportional to n^(-C_star * t)."""
    if n < 2:
        raise DataError(f"need n >= 2, got {n}")
    t = np.arange(h.T_max + 1, dtype=np.float64)
    log_w = -h.C_star * t * math.log(n)
    w = np.exp(log_w - log_w.max())
    return w / w.sum()


def sample_T(rng, n: int, h: Hyperparams) -> int:
    return int(rng.choice(h.T_max + 1, p=t_prior_weights(n, h)))


def sample_z_given_T(rng, T: int, T_max: int) -> np.ndarray:
    """Uniform activity pattern with exactly T ones among T_max slots."""
    if not 0 <= T <= T_max:
        raise DataError(f"T must be in [0, {T_max}], got {T}")
    z = np.zeros(T_max, dtype=np.int8)
    if T:
        z[rng.choice(T_max, size=T, replace=False)] = 1
    return z


def log_prior_S_s(S, s, w: np.ndarray, grid: SplitGrid) -> float:
    """Composed log prior of a component and its splits:
    log[ w_d / C(p, d) * prod_j 1/|A_j| ] with p = len(w), d = |S|."""
    d = len(S)
    p = w.size
    if not 1 <= d <= p:
        raise DataError(f"|S| must be in [1, {p}], got {d}")
    out = math.log(w[d - 1]) - math.log(math.comb(p, d))
    for j in S:
        out -= math.log(grid.size(j))
    return out


def log_grow_prior_ratio(d: int, p: int, eta: int, h: Hyperparams) -> float:
    """Closed-form log prior ratio for growing a size-d component by one
    variable whose column has eta candidate splits.

    Equals log_prior_S_s(S + {j}) - log_prior_S_s(S); the (d+1) term is the
    subset-count part of that difference.
    """
    a, g = h.alpha_split, h.gamma_split
    return (
        math.log(d + 1)
        + math.log(a)
        + math.log1p(-a * (2 + d) ** (-g))
        - math.log((1 + d) ** g - a)
        - math.log(p - d)
        - math.log(eta)
    )


def log_prune_prior_ratio(d: int, p: int, eta: int, h: Hyperparams) -> float:
    """Closed-form log prior ratio for deleting one variable (with eta
    candidate splits) from a size-d component; the reciprocal of the
    matching grow ratio."""
    return -log_grow_prior_ratio(d - 1, p, eta, h)


def estimate_residual_variance(d: DataMatrix) -> float:
    """Population variance of least-squares residuals of y on [1, x].

    Falls back to the variance of the centered response when p >= n or the
    design is rank deficient.
    """
    if d.p >= d.n:
        return float(np.var(d.y))
    design = np.column_stack([np.ones(d.n), d.x])
    coef, _, rank, _ = np.linalg.lstsq(design, d.y, rcond=None)
    if rank < design.shape[1]:
        return float(np.var(d.y))
    return float(np.var(d.y - design @ coef))


def calibrate_lambda(q_lambda: float, v: float, d: DataMatrix) -> float:
    """Solve for lambda so the IG(v/2, v*lambda/2) prior puts mass q_lambda
    on {sigma^2 <= sigma_hat^2}, sigma_hat^2 being the least-squares
    residual variance.

    P{IG(a,b) <= x} = Q(a, b/x) with Q the regularized upper incomplete
    gamma, so lambda has the closed form 2 * sigma_hat^2 * Q^{-1}(v/2,
    q_lambda) / v. Floored at a tiny constant to survive degenerate
    (near-perfectly linear) responses.
    """
    if not 0.0 < q_lambda < 1.0:
        raise ConfigError([f"q_lambda must be in (0,1), got {q_lambda}"])
    sigma2_hat = estimate_residual_variance(d)
    lam = 2.0 * sigma2_hat * float(gammainccinv(v / 2.0, q_lambda)) / v
    return max(lam, LAMBDA_FLOOR)


def resolve_lambda(h: Hyperparams, d: DataMatrix) -> Hyperparams:
    """Return hyperparams with lam filled in (calibrated unless given)."""
    if h.lam is not None:
        return h
    return replace(h, lam=calibrate_lambda(h.q_lambda, h.v, d))
