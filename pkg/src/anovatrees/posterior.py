"""Posterior analytics: predictions with uncertainty, per-component norms,
importance scores, the post-hoc component-selection rule, and scoring
metrics (RMSE, CRPS).

Everything here is a pure read-only function of retained draws, safe to run
concurrently. Component norms are computed on the standardized response
scale so selection thresholds are scale-free.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .dataset import (DataMatrix, EmpiricalMarginals, SplitGrid,
                      StandardizationParams)
from .errors import DataError, UsageError
from .tree import IdentifiableTree, evaluate_matrix, tree_from_record, tree_to_record

DRAWS_FORMAT = "anovatrees-draws-v1"


@dataclass(frozen=True)
class Draw:
    """One retained posterior sample: the active trees and the noise
    variance, on the standardized scale."""

    trees: tuple[IdentifiableTree, ...]
    sigma2: float


@dataclass
class PosteriorDraws:
    """Retained post-burn-in samples plus everything needed to evaluate
    them: the training marginals (the identifiability reference measure)
    and the response standardization."""

    draws: list[Draw]
    marginals: EmpiricalMarginals
    std: StandardizationParams
    column_names: tuple[str, ...]
    meta: dict

    @property
    def p(self) -> int:
        return self.marginals.grid.p

    def require_nonempty(self):
        if not self.draws:
            raise DataError("no posterior draws")

    def check_query(self, x: np.ndarray) -> np.ndarray:
        x = np.ascontiguousarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.p:
            raise DataError(
                f"query matrix must have {self.p} columns, got shape {x.shape}"
            )
        return x


@dataclass
class ComponentSummary:
    """Per-component posterior summary.

    ``norms`` holds the empirical L2 norm of the component in every draw
    (zero in draws where it is inactive); ``score`` is the posterior mean
    norm divided by the largest posterior mean norm across components;
    ``exceedance`` is the posterior probability that the norm exceeds the
    selection threshold (None when no threshold was supplied).
    """

    S: tuple[int, ...]
    norms: np.ndarray
    mean_norm: float
    score: float
    exceedance: float | None = None


def _mean_f_std(dr: PosteriorDraws, x: np.ndarray) -> np.ndarray:
    total = np.zeros(x.shape[0])
    for draw in dr.draws:
        for t in draw.trees:
            total += evaluate_matrix(t, x)
    return total / len(dr.draws)


def predict_mean(dr: PosteriorDraws, x: np.ndarray) -> np.ndarray:
    """Posterior-mean prediction at every row of x, on the original
    response scale."""
    dr.require_nonempty()
    x = dr.check_query(x)
    return dr.std.inverse_y(_mean_f_std(dr, x))


def predict_components(dr: PosteriorDraws, x: np.ndarray) -> dict:
    """Posterior-mean value of every component at every row of x, on the
    standardized scale. Summing them and de-standardizing reproduces
    predict_mean exactly."""
    dr.require_nonempty()
    x = dr.check_query(x)
    parts: dict[tuple[int, ...], np.ndarray] = {}
    for draw in dr.draws:
        for t in draw.trees:
            acc = parts.get(t.S)
            if acc is None:
                acc = parts[t.S] = np.zeros(x.shape[0])
            acc += evaluate_matrix(t, x)
    return {S: v / len(dr.draws) for S, v in parts.items()}


def predictive_matrix(dr: PosteriorDraws, x: np.ndarray) -> np.ndarray:
    """(n_draws, n_rows) matrix of f values, standardized scale: one pass
    over the trees of every draw, shared by whole-dataset scoring."""
    dr.require_nonempty()
    x = dr.check_query(x)
    out = np.zeros((len(dr.draws), x.shape[0]))
    for i, draw in enumerate(dr.draws):
        for t in draw.trees:
            out[i] += evaluate_matrix(t, x)
    return out


def predictive_samples(dr: PosteriorDraws, x_row, rng, m: int) -> np.ndarray:
    """m samples from the posterior predictive at one covariate vector:
    cycle through the retained draws, adding Gaussian noise with each
    draw's variance; de-standardized."""
    dr.require_nonempty()
    if m < 1:
        raise UsageError(f"need m >= 1 samples, got {m}")
    x = dr.check_query(np.asarray(x_row, dtype=np.float64).reshape(1, -1))
    f_by_draw = predictive_matrix(dr, x)[:, 0]
    sigma_by_draw = np.sqrt([draw.sigma2 for draw in dr.draws])
    idx = np.arange(m) % len(dr.draws)
    samples = f_by_draw[idx] + sigma_by_draw[idx] * rng.standard_normal(m)
    return dr.std.inverse_y(samples)


def component_norm(draw: Draw, S, d: DataMatrix) -> float:
    """Empirical L2 norm over the training rows of the draw's component S
    (the sum of its trees with that variable set), standardized scale."""
    S = tuple(int(j) for j in S)
    f = np.zeros(d.n)
    hit = False
    for t in draw.trees:
        if t.S == S:
            f += evaluate_matrix(t, d.x)
            hit = True
    if not hit:
        return 0.0
    return float(np.sqrt(np.mean(f * f)))


def component_norms(dr: PosteriorDraws, d: DataMatrix) -> dict:
    """Per-draw component norms for every component appearing in any draw:
    {S: array of one norm per draw}."""
    dr.require_nonempty()
    sums: dict[tuple[int, ...], np.ndarray] = {}
    n_draws = len(dr.draws)
    for i, draw in enumerate(dr.draws):
        per_comp: dict[tuple[int, ...], np.ndarray] = {}
        for t in draw.trees:
            acc = per_comp.get(t.S)
            if acc is None:
                acc = per_comp[t.S] = np.zeros(d.n)
            acc += evaluate_matrix(t, d.x)
        for S, f in per_comp.items():
            norms = sums.get(S)
            if norms is None:
                norms = sums[S] = np.zeros(n_draws)
            norms[i] = np.sqrt(np.mean(f * f))
    return sums


def importance_scores(dr: PosteriorDraws, d: DataMatrix,
                      tau: float | None = None) -> list[ComponentSummary]:
    """Posterior mean norm of every encountered component, normalized by
    the maximum so the top score is exactly 1; sorted descending. With a
    threshold tau, each summary also carries the exceedance probability
    used by the selection rule."""
    norms = component_norms(dr, d)
    means = {S: float(v.mean()) for S, v in norms.items()}
    top = max(means.values(), default=0.0)
    out = []
    for S, v in norms.items():
        out.append(ComponentSummary(
            S=S,
            norms=v,
            mean_norm=means[S],
            score=means[S] / top if top > 0 else 0.0,
            exceedance=float(np.mean(v > tau)) if tau is not None else None,
        ))
    out.sort(key=lambda cs: (-cs.score, cs.S))
    return out


def select_components(dr: PosteriorDraws, d: DataMatrix, tau: float,
                      delta: float) -> list[tuple[int, ...]]:
    """Keep component S iff the posterior probability of its norm exceeding
    tau is at least delta; everything else is deleted."""
    if not 0.0 < delta < 0.5:
        raise UsageError(f"delta must be in (0, 1/2), got {delta}")
    if tau < 0:
        raise UsageError(f"tau must be nonnegative, got {tau}")
    kept = [
        cs.S for cs in importance_scores(dr, d, tau=tau)
        if cs.exceedance >= delta
    ]
    return sorted(kept)


def crps(samples, y: float) -> float:
    """Continuous ranked probability score of the empirical distribution of
    ``samples`` against outcome y.

    Uses the pairwise identity mean|Z - y| - mean|Z - Z'|/2, computed in
    O(m log m) from the sorted samples; this equals the squared-integral
    definition applied to the empirical CDF.
    """
    z = np.sort(np.asarray(samples, dtype=np.float64))
    m = z.size
    if m < 1:
        raise UsageError("need at least one sample")
    term_abs = float(np.mean(np.abs(z - y)))
    if m == 1:
        return term_abs
    k = np.arange(m, dtype=np.float64)
    pair_sum = float(((2.0 * k - m + 1.0) * z).sum())  # sum_{i<j} z_(j)-z_(i)
    return term_abs - pair_sum / (m * m)


def rmse(pred, actual) -> float:
    pred = np.asarray(pred, dtype=np.float64)
    actual = np.asarray(actual, dtype=np.float64)
    if pred.shape != actual.shape:
        raise DataError(f"length mismatch: {pred.shape} vs {actual.shape}")
    return float(np.sqrt(np.mean((pred - actual) ** 2)))


def normalized_metric(values, baseline: float) -> np.ndarray:
    """Ratios value/baseline (a method normalized by itself gives 1.000)."""
    if not baseline > 0:
        raise DataError(f"baseline must be positive, got {baseline}")
    return np.asarray(values, dtype=np.float64) / baseline


def draws_to_json_dict(dr: PosteriorDraws) -> dict:
    """Serializable form of the draws. Tree heights are never stored; they
    are re-derived from the embedded marginals on load."""
    m = dr.marginals
    return {
        "format": DRAWS_FORMAT,
        "meta": dr.meta,
        "column_names": list(dr.column_names),
        "standardization": {
            "y_mean": dr.std.y_mean,
            "y_scale": dr.std.y_scale,
            "x_means": [float(v) for v in dr.std.x_means],
            "x_scales": [float(v) for v in dr.std.x_scales],
        },
        "marginals": {
            "n": m.n,
            "grids": [[float(v) for v in g] for g in m.grid.values],
            "left_counts": [[int(c) for c in lc] for lc in m.left_counts],
        },
        "draws": [
            {"sigma2": draw.sigma2,
             "trees": [tree_to_record(t) for t in draw.trees]}
            for draw in dr.draws
        ],
    }


def draws_from_json_dict(obj: dict) -> PosteriorDraws:
    if obj.get("format") != DRAWS_FORMAT:
        raise DataError(f"not a draws file (format={obj.get('format')!r})")
    grids = tuple(np.asarray(g, dtype=np.float64) for g in obj["marginals"]["grids"])
    marg = EmpiricalMarginals(
        n=int(obj["marginals"]["n"]),
        grid=SplitGrid(values=grids),
        left_counts=tuple(np.asarray(c, dtype=np.int64)
                          for c in obj["marginals"]["left_counts"]),
    )
    std = StandardizationParams(
        y_mean=float(obj["standardization"]["y_mean"]),
        y_scale=float(obj["standardization"]["y_scale"]),
        x_means=np.asarray(obj["standardization"]["x_means"]),
        x_scales=np.asarray(obj["standardization"]["x_scales"]),
    )
    draws = [
        Draw(trees=tuple(tree_from_record(rec, marg) for rec in d["trees"]),
             sigma2=float(d["sigma2"]))
        for d in obj["draws"]
    ]
    return PosteriorDraws(draws=draws, marginals=marg, std=std,
                          column_names=tuple(obj["column_names"]),
                          meta=dict(obj["meta"]))


def save_draws(dr: PosteriorDraws, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(draws_to_json_dict(dr), fh, sort_keys=True,
                  separators=(",", ":"))
        fh.write("\n")


def load_draws(path) -> PosteriorDraws:
    try:
        with open(path, encoding="utf-8") as fh:
            return draws_from_json_dict(json.load(fh))
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise DataError(f"malformed draws file {path}: {exc}") from exc


def merge_draws(parts: list[PosteriorDraws]) -> PosteriorDraws:
    """Pool draws from several chains fit on the same data."""
    if not parts:
        raise DataError("no draws files given")
    first = parts[0]
    for other in parts[1:]:
        if other.p != first.p or other.column_names != first.column_names:
            raise DataError("draws files come from different datasets")
    if len(parts) == 1:
        return first
    merged = PosteriorDraws(
        draws=[d for part in parts for d in part.draws],
        marginals=first.marginals,
        std=first.std,
        column_names=first.column_names,
        meta={"merged_chains": len(parts),
              "chains": [p.meta for p in parts]},
    )
    return merged
