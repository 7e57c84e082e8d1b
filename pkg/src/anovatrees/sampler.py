"""MCMC engine: per-slot Metropolis-Hastings tree updates with the height
integrated out, conjugate height and noise-variance draws, and the
activity-flip move that lets the number of trees vary.

One chain owns one McmcState and one RNG stream; the shared DataMatrix,
SplitGrid and EmpiricalMarginals are immutable, so chains can run
concurrently over them.
"""

from __future__ import annotations

import enum
import json
import math
import sys
from dataclasses import dataclass, field

import numpy as np

from . import priors
from .dataset import (DataMatrix, EmpiricalMarginals, SplitGrid, prepare,
                      standardize)
from .errors import AuditError, ConfigError, DataError, NumericError
from .posterior import Draw, PosteriorDraws
from .priors import Hyperparams
from .tree import (CellAssignment, IdentifiableTree, assign_cells, build_tree,
                   max_abs_multiplier)

GROW_PROB, PRUNE_PROB, CHANGE_PROB = 0.28, 0.28, 0.44


class MoveKind(enum.Enum):
    GROW = "grow"
    PRUNE = "prune"
    CHANGE = "change"


@dataclass(frozen=True)
class Proposal:
    """A proposed (S, s) alteration with its transition log densities.

    ``S_new`` is None when the drawn move kind is infeasible at the current
    state (grow at full size, prune at size one, change with an empty
    complement); such a draw counts as an automatic rejection.
    """

    kind: MoveKind
    S_new: tuple[int, ...] | None = None
    s_new: tuple[float, ...] | None = None
    log_q_forward: float = 0.0
    log_q_reverse: float = 0.0
    grew: int | None = None     # column added (GROW/CHANGE)
    pruned: int | None = None   # column removed (PRUNE/CHANGE)

    @property
    def feasible(self) -> bool:
        return self.S_new is not None


@dataclass
class ChainConfig:
    """MCMC schedule. Every field is exposed to the CLI."""

    n_iter: int = 2000
    burn_in: int = 1000
    thin: int = 1
    seed: int = 0
    truncation_enabled: bool = False
    audit_every: int = 100
    progress_every: int = 0  # 0 disables stderr progress lines

    def validate(self):
        problems = []
        if self.n_iter < 1:
            problems.append(f"n_iter must be >= 1, got {self.n_iter}")
        if not 0 <= self.burn_in < max(self.n_iter, 1):
            problems.append(f"burn_in must be in [0, n_iter), got {self.burn_in}")
        if self.thin < 1:
            problems.append(f"thin must be >= 1, got {self.thin}")
        if self.audit_every < 1:
            problems.append(f"audit_every must be >= 1, got {self.audit_every}")
        if problems:
            raise ConfigError(problems)


@dataclass
class _Slot:
    """One tree slot. Dormant slots (z=0) may hold stale parameters and
    never carry a cell cache."""

    tree: IdentifiableTree
    assign: CellAssignment | None = None
    sum_a2: float = 0.0  # cached sum of squared multipliers over rows


@dataclass(frozen=True)
class SamplerContext:
    """Immutable per-problem inputs shared by every sweep (and chain)."""

    data: DataMatrix  # standardized response
    grid: SplitGrid
    marginals: EmpiricalMarginals
    splittable: np.ndarray
    size_weights: np.ndarray
    h: Hyperparams
    log_n: float


def make_context(data: DataMatrix, h: Hyperparams) -> SamplerContext:
    """Build grids, marginals and size weights for a standardized dataset."""
    h.validate()
    if h.lam is None:
        raise ConfigError(["lambda is unresolved; call priors.resolve_lambda first"])
    grid, marg = prepare(data)
    splittable = grid.splittable()
    if splittable.size == 0:
        raise DataError("no splittable covariate columns")
    w = priors.component_size_weights(int(splittable.size), h)
    return SamplerContext(data=data, grid=grid, marginals=marg,
                          splittable=splittable, size_weights=w, h=h,
                          log_n=math.log(data.n))


@dataclass
class MoveStats:
    """Per-kind proposal/acceptance counters, including automatic
    rejections of infeasible draws."""

    proposed: dict = field(default_factory=dict)
    accepted: dict = field(default_factory=dict)
    infeasible: dict = field(default_factory=dict)

    def record(self, kind: str, feasible: bool, accepted: bool):
        self.proposed[kind] = self.proposed.get(kind, 0) + 1
        if not feasible:
            self.infeasible[kind] = self.infeasible.get(kind, 0) + 1
        if accepted:
            self.accepted[kind] = self.accepted.get(kind, 0) + 1

    def rates(self) -> dict:
        return {
            kind: self.accepted.get(kind, 0) / count
            for kind, count in sorted(self.proposed.items())
        }


@dataclass
class McmcState:
    """Mutable chain state: slots, activity vector, noise variance and the
    residual cache r_i = y_i - sum_t z_t * tree_t(x_i)."""

    slots: list[_Slot]
    z: np.ndarray  # int8, length T_max
    sigma2: float
    resid: np.ndarray

    @property
    def n_active(self) -> int:
        return int(self.z.sum())

    def active_indices(self):
        return np.flatnonzero(self.z)

    def recompute_resid(self, data: DataMatrix) -> np.ndarray:
        r = data.y.copy()
        for t in self.active_indices():
            slot = self.slots[t]
            r -= slot.tree.beta * slot.assign.mult
        return r

    def audit(self, data: DataMatrix, when: str, tol: float = 1e-8):
        drift = float(np.max(np.abs(self.resid - self.recompute_resid(data)),
                             initial=0.0))
        if drift > tol:
            raise AuditError(
                f"residual cache drift {drift:.3e} exceeds {tol:.1e} at {when} "
                f"(active trees: {self.n_active}, sigma2: {self.sigma2:.6g})"
            )
        if not np.isfinite(self.sigma2) or self.sigma2 <= 0:
            raise AuditError(f"sigma2 became {self.sigma2!r} at {when}")


def init_state(rng, ctx: SamplerContext) -> McmcState:
    """Draw the initial state from the prior and fill the residual cache."""
    h = ctx.h
    T = priors.sample_T(rng, ctx.data.n, h)
    z = priors.sample_z_given_T(rng, T, h.T_max)
    slots = []
    for t in range(h.T_max):
        S = priors.sample_component(rng, ctx.size_weights, ctx.splittable)
        s = priors.sample_splits(rng, S, ctx.grid)
        beta = priors.sample_beta(rng, h)
        slot = _Slot(tree=build_tree(S, s, beta, ctx.marginals))
        if z[t]:
            slot.assign = assign_cells(slot.tree, ctx.data)
            slot.sum_a2 = float(slot.assign.mult @ slot.assign.mult)
        slots.append(slot)
    sigma2 = priors.sample_sigma2(rng, h)
    state = McmcState(slots=slots, z=z, sigma2=sigma2,
                      resid=np.zeros(ctx.data.n))
    state.resid = state.recompute_resid(ctx.data)
    return state


def propose_move(rng, S, s, grid: SplitGrid, splittable: np.ndarray) -> Proposal:
    """Draw GROW/PRUNE/CHANGE with probability 0.28/0.28/0.44 and build the
    altered component.

    The returned transition log densities follow the per-kind proposal
    distributions (the kind probabilities cancel between a move and its
    reverse, so they are not included). Infeasible draws come back with
    S_new=None and count as automatic rejections: this keeps the kernel
    well defined without reweighting the kind mixture.
    """
    d = len(S)
    in_S = set(S)
    complement = [int(j) for j in splittable if int(j) not in in_S]
    u = rng.random()
    if u < GROW_PROB:
        if not complement:
            return Proposal(kind=MoveKind.GROW)
        j_new = complement[rng.integers(len(complement))]
        eta = grid.size(j_new)
        s_star = float(grid.values[j_new][rng.integers(eta)])
        S_new = tuple(sorted((*S, j_new)))
        s_new = tuple(v for _, v in sorted(zip((*S, j_new), (*s, s_star))))
        return Proposal(
            kind=MoveKind.GROW, S_new=S_new, s_new=s_new,
            log_q_forward=-math.log(len(complement)) - math.log(eta),
            log_q_reverse=-math.log(d + 1),
            grew=j_new,
        )
    if u < GROW_PROB + PRUNE_PROB:
        if d == 1:
            # pruning to the empty component would give the zero tree;
            # deletion is the activity move's job
            return Proposal(kind=MoveKind.PRUNE)
        idx = int(rng.integers(d))
        j_del = S[idx]
        keep = [k for k in range(d) if k != idx]
        return Proposal(
            kind=MoveKind.PRUNE,
            S_new=tuple(S[k] for k in keep), s_new=tuple(s[k] for k in keep),
            log_q_forward=-math.log(d),
            log_q_reverse=-math.log(len(complement) + 1) - math.log(grid.size(j_del)),
            pruned=j_del,
        )
    if not complement:
        return Proposal(kind=MoveKind.CHANGE)
    idx = int(rng.integers(d))
    j_del = S[idx]
    j_new = complement[rng.integers(len(complement))]
    eta_new = grid.size(j_new)
    s_star = float(grid.values[j_new][rng.integers(eta_new)])
    keep_cols = [S[k] for k in range(d) if k != idx] + [j_new]
    keep_vals = [s[k] for k in range(d) if k != idx] + [s_star]
    order = sorted(range(d), key=keep_cols.__getitem__)
    q_both = -math.log(d) - math.log(len(complement))
    return Proposal(
        kind=MoveKind.CHANGE,
        S_new=tuple(keep_cols[k] for k in order),
        s_new=tuple(keep_vals[k] for k in order),
        log_q_forward=q_both - math.log(eta_new),
        log_q_reverse=q_both - math.log(grid.size(j_del)),
        grew=j_new, pruned=j_del,
    )


def log_prior_ratio_for_move(prop: Proposal, d_old: int, p: int,
                             grid: SplitGrid, h: Hyperparams) -> float:
    """Log prior ratio pi(S_new, s_new)/pi(S, s) for a feasible proposal,
    via the closed forms (cross-checked against composed log priors in the
    test suite)."""
    if prop.kind is MoveKind.GROW:
        return priors.log_grow_prior_ratio(d_old, p, grid.size(prop.grew), h)
    if prop.kind is MoveKind.PRUNE:
        return priors.log_prune_prior_ratio(d_old, p, grid.size(prop.pruned), h)
    return math.log(grid.size(prop.pruned)) - math.log(grid.size(prop.grew))


def marginal_AB(resid_t: np.ndarray, mult: np.ndarray, sigma2: float,
                sigma_beta2: float):
    """Sufficient statistics of a tree against its partial residuals once
    the height is integrated out:
    A = sum(mult^2)/sigma2 + 1/sigma_beta2, B = sum(mult*resid)/sigma2."""
    return (
        float(mult @ mult) / sigma2 + 1.0 / sigma_beta2,
        float(mult @ resid_t) / sigma2,
    )


def _check_finite_log_ratio(log_r: float):
    if math.isnan(log_r) or log_r == math.inf:
        raise NumericError(f"non-finite MH log ratio: {log_r!r}")


def mh_accept_tree(rng, current, proposed, log_q_ratio: float) -> bool:
    """Accept/reject a tree alteration from the marginalized posterior
    ratio sqrt(A/A') exp(B'^2/2A' - B^2/2A), the prior ratio and the
    proposal ratio, all in log space.

    ``current`` and ``proposed`` are (A, B, log_prior) triples;
    ``log_q_ratio`` is log q(reverse) - log q(forward).
    """
    a_cur, b_cur, lp_cur = current
    a_new, b_new, lp_new = proposed
    log_r = (
        0.5 * (math.log(a_cur) - math.log(a_new))
        + b_new * b_new / (2.0 * a_new)
        - b_cur * b_cur / (2.0 * a_cur)
        + (lp_new - lp_cur)
        + log_q_ratio
    )
    _check_finite_log_ratio(log_r)
    return math.log(rng.random()) < log_r


def gibbs_beta(rng, A: float, B: float) -> float:
    """Conjugate height draw N(B/A, 1/A)."""
    return B / A + float(rng.standard_normal()) / math.sqrt(A)


def gibbs_sigma2(rng, resid: np.ndarray, h: Hyperparams) -> float:
    """Conjugate noise-variance draw IG((v+n)/2, (v*lambda + sum r^2)/2)."""
    shape = (h.v + resid.size) / 2.0
    scale = (h.v * h.lam + float(resid @ resid)) / 2.0
    return priors.draw_inv_gamma(rng, shape, scale)


def _update_active_slot(rng, state: McmcState, t: int, ctx: SamplerContext,
                        stats: MoveStats):
    """One MH (S, s) update with marginalized height, then the conjugate
    height redraw; keeps the residual cache exact."""
    slot = state.slots[t]
    h = ctx.h
    resid_t = state.resid + slot.tree.beta * slot.assign.mult

    prop = propose_move(rng, slot.tree.S, slot.tree.s, ctx.grid, ctx.splittable)
    accepted = False
    a_cur = slot.sum_a2 / state.sigma2 + 1.0 / h.sigma_beta2
    b_cur = float(slot.assign.mult @ resid_t) / state.sigma2
    if prop.feasible:
        new_tree = build_tree(prop.S_new, prop.s_new, 0.0, ctx.marginals)
        new_assign = assign_cells(new_tree, ctx.data)
        new_sum_a2 = float(new_assign.mult @ new_assign.mult)
        a_new = new_sum_a2 / state.sigma2 + 1.0 / h.sigma_beta2
        b_new = float(new_assign.mult @ resid_t) / state.sigma2
        dlp = log_prior_ratio_for_move(prop, len(slot.tree.S),
                                       int(ctx.splittable.size), ctx.grid, h)
        accepted = mh_accept_tree(
            rng, (a_cur, b_cur, 0.0), (a_new, b_new, dlp),
            prop.log_q_reverse - prop.log_q_forward,
        )
        if accepted:
            slot.tree = new_tree
            slot.assign = new_assign
            slot.sum_a2 = new_sum_a2
            a_cur, b_cur = a_new, b_new
    stats.record(prop.kind.value, prop.feasible, accepted)

    beta = gibbs_beta(rng, a_cur, b_cur)
    slot.tree = slot.tree.with_beta(beta)
    state.resid = resid_t - beta * slot.assign.mult


def _log_binom(n: int, k: int) -> float:
    return math.lgamma(n + 1) - math.lgamma(k + 1) - math.lgamma(n - k + 1)


def mh_flip_z(rng, state: McmcState, ctx: SamplerContext, stats: MoveStats):
    """Flip one uniformly chosen activity bit via Metropolis-Hastings.

    The log ratio combines the Gaussian likelihood change, the tree-count
    prior factor exp(-C_star * dT * log n) and the binomial-coefficient
    ratio C(T_max, T)/C(T_max, T_new); the flip proposal itself is
    symmetric. A dormant slot is refreshed from the prior only when its
    activation is proposed; the fresh draw stays in the slot either way.
    """
    h = ctx.h
    k = int(rng.integers(h.T_max))
    T_cur = state.n_active
    slot = state.slots[k]

    if state.z[k]:
        T_new = T_cur - 1
        beta = slot.tree.beta
        cross = float(slot.assign.mult @ state.resid)
        # ||r + g||^2 - ||r||^2 with g = beta * mult
        dss = 2.0 * beta * cross + beta * beta * slot.sum_a2
    else:
        T_new = T_cur + 1
        S = priors.sample_component(rng, ctx.size_weights, ctx.splittable)
        s = priors.sample_splits(rng, S, ctx.grid)
        beta = priors.sample_beta(rng, h)
        slot.tree = build_tree(S, s, beta, ctx.marginals)
        slot.assign = None
        slot.sum_a2 = 0.0
        fresh_assign = assign_cells(slot.tree, ctx.data)
        fresh_sum_a2 = float(fresh_assign.mult @ fresh_assign.mult)
        cross = float(fresh_assign.mult @ state.resid)
        # ||r - g||^2 - ||r||^2
        dss = -2.0 * beta * cross + beta * beta * fresh_sum_a2

    log_r = (
        -dss / (2.0 * state.sigma2)
        - h.C_star * (T_new - T_cur) * ctx.log_n
        + _log_binom(h.T_max, T_cur) - _log_binom(h.T_max, T_new)
    )
    _check_finite_log_ratio(log_r)
    accepted = math.log(rng.random()) < log_r
    if accepted:
        if state.z[k]:
            state.resid = state.resid + slot.tree.beta * slot.assign.mult
            state.z[k] = 0
            slot.assign = None
            slot.sum_a2 = 0.0
        else:
            state.z[k] = 1
            slot.assign = fresh_assign
            slot.sum_a2 = fresh_sum_a2
            state.resid = state.resid - slot.tree.beta * fresh_assign.mult
    stats.record("z_flip", True, accepted)


def sweep(rng, state: McmcState, ctx: SamplerContext,
          stats: MoveStats | None = None) -> McmcState:
    """One full Gibbs sweep: every active slot gets an (S, s) MH update and
    a conjugate height redraw, then one activity flip, then the conjugate
    noise-variance draw. Dormant slots are left stale (they are refreshed
    lazily when activation is proposed)."""
    if stats is None:
        stats = MoveStats()
    for t in range(ctx.h.T_max):
        if state.z[t]:
            _update_active_slot(rng, state, t, ctx, stats)
    mh_flip_z(rng, state, ctx, stats)
    state.sigma2 = gibbs_sigma2(rng, state.resid, ctx.h)
    return state


def _sup_norm_bound(state: McmcState) -> float:
    """Cheap upper bound on sup|f|: sum over active trees of
    |beta| * max|cell multiplier| (the exact sup over one tree's cells)."""
    return float(sum(
        abs(state.slots[t].tree.beta) * max_abs_multiplier(state.slots[t].tree)
        for t in state.active_indices()
    ))


def _violates_truncation(state: McmcState, xi: float) -> bool:
    if not (1.0 / xi <= state.sigma2 <= xi):
        return True
    return _sup_norm_bound(state) > xi


def run_chain(d: DataMatrix, h: Hyperparams, c: ChainConfig,
              draw_log_path=None) -> PosteriorDraws:
    """Run one MCMC chain on raw data and return retained posterior draws.

    Standardizes the response internally; draws are stored on the
    standardized scale together with the inverse-transform parameters.
    With truncation enabled, retained draws must satisfy the sup-norm and
    variance bounds; violating states are skipped from the record (the
    chain itself keeps running) and counted.
    """
    c.validate()
    h.validate()
    h.warn_scaling(d.n)
    data_std, std_params = standardize(d)
    h_resolved = priors.resolve_lambda(h, data_std)
    ctx = make_context(data_std, h_resolved)
    xi = h_resolved.xi if (c.truncation_enabled and h_resolved.xi is not None) else None

    rng = np.random.default_rng(c.seed)
    state = init_state(rng, ctx)
    state.audit(ctx.data, "init")

    stats = MoveStats()
    draws: list[Draw] = []
    skipped = 0
    log_fh = open(draw_log_path, "w", encoding="utf-8") if draw_log_path else None
    try:
        for i in range(1, c.n_iter + 1):
            sweep(rng, state, ctx, stats)
            if i % c.audit_every == 0:
                state.audit(ctx.data, f"sweep {i}")
            if i > c.burn_in and (i - c.burn_in - 1) % c.thin == 0:
                if xi is not None and _violates_truncation(state, xi):
                    skipped += 1
                else:
                    draw = Draw(
                        trees=tuple(state.slots[t].tree
                                    for t in state.active_indices()),
                        sigma2=state.sigma2,
                    )
                    draws.append(draw)
                    if log_fh is not None:
                        rec = {"iter": i, "sigma2": draw.sigma2,
                               "trees": [{"S": list(t.S), "s": list(t.s),
                                          "beta": t.beta} for t in draw.trees]}
                        log_fh.write(json.dumps(rec, sort_keys=True) + "\n")
            if c.progress_every and i % c.progress_every == 0:
                rates = ", ".join(f"{k}={v:.2f}" for k, v in stats.rates().items())
                print(f"[chain seed={c.seed}] iter {i}/{c.n_iter} "
                      f"T={state.n_active} sigma2={state.sigma2:.4g} acc({rates})",
                      file=sys.stderr)
    finally:
        if log_fh is not None:
            log_fh.close()

    if not draws:
        raise NumericError(
            "no draws retained; increase xi or disable truncation"
        )
    meta = {
        "seed": c.seed,
        "n_iter": c.n_iter,
        "burn_in": c.burn_in,
        "thin": c.thin,
        "retained": len(draws),
        "skipped_truncation": skipped,
        "acceptance_rates": stats.rates(),
        "hyperparams": {
            "alpha_split": h_resolved.alpha_split,
            "gamma_split": h_resolved.gamma_split,
            "sigma_beta2": h_resolved.sigma_beta2,
            "v": h_resolved.v,
            "lambda": h_resolved.lam,
            "q_lambda": h_resolved.q_lambda,
            "C_star": h_resolved.C_star,
            "T_max": h_resolved.T_max,
            "xi": h_resolved.xi,
            "truncation_enabled": c.truncation_enabled,
        },
    }
    return PosteriorDraws(draws=draws, marginals=ctx.marginals,
                          std=std_params, column_names=d.column_names,
                          meta=meta)
