"""Forward simulation, empirical fairness accounting and brute-force checks.

Bidding is truthful throughout; strategic deviations only appear inside
``verify_epic``.  A *policy* is any object with ``profile``, ``horizon``,
``root()``, ``child(state, winner)``, ``feasible(state)`` and
``solve_round(state)``; both ``DynamicSolver`` and the approximation plans
qualify.

Replication ``r`` draws its values from ``default_rng([seed, r])``, so results
do not depend on batching or on the number of worker threads.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .dist import GroupProfile, Uniform
from .dynamic_solver import (
    BOTH_FEASIBLE,
    FORCED,
    INFEASIBLE,
    DynamicSolver,
    PaymentBreakdown,
    discount_weights,
    resolve_round,
)
from .errors import InfeasibleError, ParameterError

THREADS_ENV = "FAIRMECH_THREADS"


@dataclass(frozen=True)
class AuctionConfig:
    T: int
    n: int
    delta: float
    alpha1: float
    alpha2: float
    profile: GroupProfile
    seed: int = 0
    replications: int = 10_000

    def __post_init__(self):
        if self.T < 1 or self.n < 1:
            raise ParameterError("T and n must be at least 1")
        if not 0 < self.delta <= 1:
            raise ParameterError("delta must lie in (0, 1]")
        if self.alpha1 < 0 or self.alpha2 < 0 or self.alpha1 + self.alpha2 > 1 + 1e-12:
            raise ParameterError("need alpha_i >= 0 and alpha1 + alpha2 <= 1")
        if self.profile.horizon != self.T or self.profile.n != self.n:
            raise ParameterError("profile horizon and group size must match T and n")
        if self.replications < 1:
            raise ParameterError("replications must be positive")

    @classmethod
    def two_uniform(cls, alpha1=0.0, alpha2=0.0, T=2, n=1, delta=0.99, seed=0, replications=10_000):
        """Group 1 ~ U(0, 1), group 2 ~ U(-0.5, 0.5) in every round."""
        profile = GroupProfile.constant(Uniform(0.0, 1.0), Uniform(-0.5, 0.5), T, n)
        return cls(T, n, delta, alpha1, alpha2, profile, seed, replications)

    @property
    def alphas(self) -> tuple[float, float]:
        return self.alpha1, self.alpha2

    @property
    def weights(self) -> np.ndarray:
        return discount_weights(self.T, self.delta)

    def with_alphas(self, alpha1, alpha2) -> "AuctionConfig":
        return replace(self, alpha1=alpha1, alpha2=alpha2)

    def with_n(self, n: int) -> "AuctionConfig":
        return replace(self, n=n, profile=self.profile.with_n(n))

    def solver(self) -> DynamicSolver:
        return DynamicSolver(self.profile, self.alphas, delta=self.delta)


@dataclass
class BatchResult:
    """Outcomes of ``R`` independent runs; per-round arrays have a leading ``(R, T)``."""

    winners: np.ndarray
    buyers: np.ndarray
    values: np.ndarray
    payments: PaymentBreakdown
    revenue: np.ndarray
    utilities: np.ndarray
    shares: np.ndarray

    def __len__(self):
        return len(self.revenue)


@dataclass
class Trajectory:
    winners: np.ndarray
    buyers: np.ndarray
    values: np.ndarray
    payments: PaymentBreakdown
    states: list = field(default_factory=list)
    revenue: float = 0.0
    utilities: np.ndarray = None
    shares: np.ndarray = None


@dataclass(frozen=True)
class MonteCarloSummary:
    replications: int
    mean_revenue: float
    se_revenue: float
    mean_utility: np.ndarray
    se_utility: np.ndarray
    mean_share: np.ndarray
    se_share: np.ndarray
    round_probs: np.ndarray
    fairness_margin: np.ndarray


def _se(x, axis=0):
    x = np.asarray(x, dtype=float)
    return np.std(x, axis=axis, ddof=1) / math.sqrt(x.shape[axis]) if x.shape[axis] > 1 else np.zeros(x.shape[1:])


def worker_count() -> int:
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


def draw_uniforms(seed: int, reps: int, T: int, n: int, start: int = 0) -> np.ndarray:
    """Uniform(0,1) draws of shape ``(reps, T, 2, n)``; replication ``r`` uses stream ``[seed, r]``."""
    out = np.empty((reps, T, 2, n))
    for j in range(reps):
        out[j] = np.random.default_rng([seed, start + j]).random((T, 2, n))
    return out


def uniforms_to_values(profile: GroupProfile, uniforms: np.ndarray) -> np.ndarray:
    values = np.empty_like(uniforms)
    for t in range(uniforms.shape[1]):
        for g, d in enumerate(profile.round(t + 1)):
            values[:, t, g, :] = d.ppf(uniforms[:, t, g, :])
    return values


def simulate_batch(policy, values: np.ndarray, weights, reward_scale=1.0, fee_scale=1.0, keep_states=False):
    """Run truthful auctions for every row of ``values`` (shape ``(R, T, 2, n)``).

    Runs that share a state are resolved together, so the cost per round is
    one vectorised call per distinct state.
    """
    R, T, _, n = values.shape
    weights = np.asarray(weights, dtype=float)
    winners = np.zeros((R, T), dtype=int)
    buyers = np.full((R, T), -1, dtype=int)
    base = np.zeros((R, T, 2, n))
    reward = np.zeros((R, T, 2, n))
    fee = np.zeros((R, T, 2, n))
    states = [[None] * T for _ in range(R)] if keep_states else None
    groups = {policy.root().key: (policy.root(), np.arange(R))}
    for t in range(1, T + 1):
        nxt = {}
        for state, idx in groups.values():
            mech = policy.solve_round(state)
            if mech.regime == INFEASIBLE:
                raise InfeasibleError(f"reached an infeasible state at t={t}", state=state)
            v = values[idx, t - 1]
            w, k, pay = resolve_round(mech, v[:, 0, :], v[:, 1, :], reward_scale, fee_scale)
            winners[idx, t - 1] = w
            buyers[idx, t - 1] = k
            base[idx, t - 1] = pay.base
            reward[idx, t - 1] = pay.reward
            fee[idx, t - 1] = pay.entry_fee
            if keep_states:
                for j in idx:
                    states[j][t - 1] = state
            if t == T:
                continue
            for g in (1, 2):
                sub = idx[w == g]
                if len(sub):
                    kid = policy.child(state, g)
                    prev = nxt.get(kid.key)
                    nxt[kid.key] = (kid, sub if prev is None else np.concatenate([prev[1], sub]))
        groups = nxt
    pay = PaymentBreakdown(base, reward, fee)
    won = np.zeros((R, T, 2, n))
    r_idx, t_idx = np.nonzero(winners > 0)
    won[r_idx, t_idx, winners[r_idx, t_idx] - 1, buyers[r_idx, t_idx]] = 1.0
    w = weights[None, :, None, None]
    total = pay.total
    revenue = np.sum(total * w, axis=(1, 2, 3))
    utilities = np.sum((won * values - total) * w, axis=(1, 3)) / n
    alloc = np.stack([winners == 1, winners == 2], axis=-1).astype(float)
    shares = np.einsum("rtg,t->rg", alloc, weights) / weights.sum()
    result = BatchResult(winners, buyers, values, pay, revenue, utilities, shares)
    return (result, states) if keep_states else result


def _concat(parts):
    first = parts[0]
    cat = lambda name: np.concatenate([getattr(p, name) for p in parts])
    pay = PaymentBreakdown(
        np.concatenate([p.payments.base for p in parts]),
        np.concatenate([p.payments.reward for p in parts]),
        np.concatenate([p.payments.entry_fee for p in parts]),
    )
    return type(first)(cat("winners"), cat("buyers"), cat("values"), pay, cat("revenue"), cat("utilities"), cat("shares"))


def simulate(config: AuctionConfig, policy=None, replications=None, weights=None, reward_scale=1.0, fee_scale=1.0) -> BatchResult:
    """Simulate ``replications`` runs of ``policy`` (the exact mechanism by default)."""
    policy = policy if policy is not None else config.solver()
    _check_root(policy)
    reps = replications or config.replications
    weights = config.weights if weights is None else weights
    workers = worker_count()
    chunk = max(1, math.ceil(reps / workers))
    starts = list(range(0, reps, chunk))

    def run(start):
        m = min(chunk, reps - start)
        u = draw_uniforms(config.seed, m, config.T, config.n, start)
        return simulate_batch(policy, uniforms_to_values(config.profile, u), weights, reward_scale, fee_scale)

    if workers == 1 or len(starts) == 1:
        parts = [run(s) for s in starts]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(run, starts))
    return _concat(parts)


def _check_root(policy):
    root = policy.root()
    if not policy.feasible(root):
        if hasattr(policy, "solve"):
            policy.solve()
        raise InfeasibleError("initial state is infeasible", state=root)


def run_auction(config: AuctionConfig, rng: np.random.Generator | None = None, policy=None) -> Trajectory:
    """One truthful run; with ``rng=None`` the run equals replication 0 of ``simulate``."""
    policy = policy if policy is not None else config.solver()
    _check_root(policy)
    if rng is None:
        u = draw_uniforms(config.seed, 1, config.T, config.n)
    else:
        u = rng.random((1, config.T, 2, config.n))
    batch, states = simulate_batch(policy, uniforms_to_values(config.profile, u), config.weights, keep_states=True)
    pay = PaymentBreakdown(batch.payments.base[0], batch.payments.reward[0], batch.payments.entry_fee[0])
    return Trajectory(
        winners=batch.winners[0],
        buyers=batch.buyers[0],
        values=batch.values[0],
        payments=pay,
        states=states[0],
        revenue=float(batch.revenue[0]),
        utilities=batch.utilities[0],
        shares=batch.shares[0],
    )


def summarize(batch: BatchResult, alphas) -> MonteCarloSummary:
    R, T = batch.winners.shape
    probs = np.stack([(batch.winners == g).mean(axis=0) for g in (1, 2)], axis=-1)
    mean_share = batch.shares.mean(axis=0)
    return MonteCarloSummary(
        replications=R,
        mean_revenue=float(batch.revenue.mean()),
        se_revenue=float(_se(batch.revenue)),
        mean_utility=batch.utilities.mean(axis=0),
        se_utility=_se(batch.utilities),
        mean_share=mean_share,
        se_share=_se(batch.shares),
        round_probs=probs,
        fairness_margin=mean_share - np.asarray(alphas, dtype=float),
    )


def monte_carlo(config: AuctionConfig, policy=None, replications=None) -> MonteCarloSummary:
    return summarize(simulate(config, policy, replications), config.alphas)


# ---------------------------------------------------------------------------
# brute-force incentive checks


@dataclass(frozen=True)
class EpicReport:
    max_gain: float
    max_gain_ex_post: float
    worst: tuple
    states_checked: int


@dataclass(frozen=True)
class IRReport:
    max_violation: float
    worst: tuple
    states_checked: int


def reachable_states(solver: DynamicSolver):
    """Feasible states reachable from the root, in round order."""
    root = solver.root()
    if not solver.feasible(root):
        solver.solve()
    level, out = [root], []
    while level:
        out.extend(level)
        nxt = {}
        for s in level:
            if s.t == solver.horizon:
                continue
            for g in (1, 2):
                kid = solver.child(s, g)
                if solver.feasible(kid):
                    nxt.setdefault(kid.key, kid)
        level = list(nxt.values())
    return out


def _midpoints(k):
    return (np.arange(k) + 0.5) / k


def _continuation(solver, state, mech, group):
    """Discounted continuation of a group-``group`` buyer, indexed by winning group 0..2."""
    cont = np.zeros(3)
    if state.t == solver.horizon:
        return cont
    for g in (1, 2):
        kid = solver.child(state, g)
        if solver.feasible(kid):
            cont[g] = mech.rho * solver.interim(kid).nu(group)
    return cont


def _deviation_utilities(solver, state, group, grid_size, opp_grid, reward_scale, fee_scale):
    """Utility array ``U[v, b, opp]`` of buyer 0 in ``group`` with value ``v`` bidding ``b``."""
    mech = solver.solve_round(state)
    n = solver.n
    dists = mech.dists
    own, other = dists[group - 1], dists[2 - group]
    grid = np.linspace(own.support_lo, own.support_hi, grid_size)
    q = _midpoints(opp_grid)
    w = other.ppf(q ** (1.0 / n))
    if n == 1:
        opp_own = np.zeros((len(w), 0))
        opp_other = w
    else:
        o = own.ppf(q ** (1.0 / (n - 1)))
        oo, ww = np.meshgrid(o, w, indexing="ij")
        opp_own = np.repeat(oo.reshape(-1, 1), n - 1, axis=1)
        opp_other = ww.reshape(-1)
    K = len(opp_other)
    G = len(grid)
    b_own = np.concatenate([np.repeat(grid, K)[:, None], np.tile(opp_own, (G, 1))], axis=1)
    b_oth = np.full((G * K, n), other.support_lo)
    b_oth[:, 0] = np.tile(opp_other, G)
    b1, b2 = (b_own, b_oth) if group == 1 else (b_oth, b_own)
    winner, buyer, pay = resolve_round(mech, b1, b2, reward_scale, fee_scale)
    mine = ((winner == group) & (buyer == 0)).astype(float).reshape(G, K)
    paid = pay.total[:, group - 1, 0].reshape(G, K)
    cont = _continuation(solver, state, mech, group)[winner].reshape(G, K)
    U = mine[None, :, :] * grid[:, None, None] + (cont - paid)[None, :, :]
    return grid, U, mech


def verify_epic(config: AuctionConfig, grid_size: int = 50, opp_grid: int = 51, reward_scale=1.0, fee_scale=1.0, solver=None) -> EpicReport:
    """Largest gain from misreporting, over reachable states, groups and a value/bid grid."""
    if config.T > 3 or config.n > 2:
        raise ParameterError("brute-force verification supports T <= 3 and n <= 2")
    solver = solver or config.solver()
    best, best_ex, worst = -math.inf, -math.inf, ()
    states = reachable_states(solver)
    for state in states:
        for group in (1, 2):
            grid, U, _ = _deviation_utilities(solver, state, group, grid_size, opp_grid, reward_scale, fee_scale)
            truth = U[np.arange(len(grid)), np.arange(len(grid))]
            gain = U.mean(axis=2) - truth.mean(axis=1)[:, None]
            ex = float(np.max(U - truth[:, None, :]))
            i, j = np.unravel_index(np.argmax(gain), gain.shape)
            if gain[i, j] > best:
                best, worst = float(gain[i, j]), (state.t, state.key, group, float(grid[i]), float(grid[j]))
            best_ex = max(best_ex, ex)
    return EpicReport(best, best_ex, worst, len(states))


def _skip_win_probability(mech, group, n, points=20_000):
    """Chance that ``group`` wins with ``n-1`` buyers (midpoint rule over the teammates' max)."""
    d = mech.deltas
    rho = mech.rho
    own, other = mech.dists[group - 1], mech.dists[2 - group]
    if group == 1:
        theta = (n - 1) * rho * d.d1 - n * rho * d.d2 - rho * d.d0
    else:
        theta = (n - 1) * rho * d.d2 - n * rho * d.d1 + rho * d.d0
    q = _midpoints(points)
    v = own.ppf(q ** (1.0 / (n - 1)))
    cutoff = other.vv_preimage(own.virtual_value(v) - theta)
    return float(np.mean(other.cdf(cutoff) ** n))


def verify_ir(config: AuctionConfig, grid_size: int = 50, opp_grid: int = 51, reward_scale=1.0, fee_scale=1.0, solver=None) -> IRReport:
    """Largest shortfall of truthful participation against skipping the round.

    A buyer who skips keeps the continuation its group reaches without it.
    With ``n = 1`` the group fields nobody, so it cannot win the round; in a
    forced round the allocation is unchanged.
    """
    if config.T > 3 or config.n > 2:
        raise ParameterError("brute-force verification supports T <= 3 and n <= 2")
    solver = solver or config.solver()
    n = solver.n
    best, worst = -math.inf, ()
    states = reachable_states(solver)
    for state in states:
        for group in (1, 2):
            grid, U, mech = _deviation_utilities(solver, state, group, grid_size, opp_grid, reward_scale, fee_scale)
            participate = U[np.arange(len(grid)), np.arange(len(grid))].mean(axis=1)
            cont = _continuation(solver, state, mech, group)
            if mech.regime == FORCED:
                skip = cont[mech.group]
            elif mech.regime == BOTH_FEASIBLE:
                lose = cont[3 - group]
                win_p = 0.0 if n == 1 else _skip_win_probability(mech, group, n)
                skip = lose + win_p * (cont[group] - lose)
            else:
                skip = 0.0
            gap = skip - participate
            j = int(np.argmax(gap))
            if gap[j] > best:
                best, worst = float(gap[j]), (state.t, state.key, group, float(grid[j]))
    return IRReport(best, worst, len(states))


# ---------------------------------------------------------------------------
# experiment grid


@dataclass(frozen=True)
class ExperimentCell:
    alpha1: float
    alpha2: float
    feasible: bool
    d_seller: float = math.nan
    d_group1: float = math.nan
    d_group2: float = math.nan
    se_seller: float = math.nan
    se_group1: float = math.nan
    se_group2: float = math.nan
    share1: float = math.nan
    share2: float = math.nan
    se_share1: float = math.nan
    se_share2: float = math.nan
    exact_d_seller: float = math.nan
    oracle_calls: int = 0


EXPERIMENT_COLUMNS = (
    "alpha1", "alpha2", "d_seller", "d_group1", "d_group2",
    "se_seller", "se_group1", "se_group2", "feasible",
)


def experiment_grid(config: AuctionConfig, levels=(0.0, 0.1, 0.2, 0.3, 0.4), replications=None) -> list[ExperimentCell]:
    """Utility changes against the unconstrained (must-allocate) baseline on an alpha grid.

    All cells reuse the same value draws, so differences are paired.
    """
    reps = replications or config.replications
    u = draw_uniforms(config.seed, reps, config.T, config.n)
    values = uniforms_to_values(config.profile, u)
    weights = config.weights
    base_solver = config.with_alphas(0.0, 0.0).solver()
    base_mu = base_solver.solve().mu
    base = simulate_batch(base_solver, values, weights)
    cells = []
    for a1 in levels:
        for a2 in levels:
            if a1 + a2 > 1 + 1e-12:
                cells.append(ExperimentCell(a1, a2, False))
                continue
            solver = config.with_alphas(a1, a2).solver()
            if not solver.feasible(solver.root()):
                cells.append(ExperimentCell(a1, a2, False))
                continue
            mu = solver.solve().mu
            run = simulate_batch(solver, values, weights)
            dr = run.revenue - base.revenue
            du = run.utilities - base.utilities
            cells.append(ExperimentCell(
                a1, a2, True,
                float(dr.mean()), float(du[:, 0].mean()), float(du[:, 1].mean()),
                float(_se(dr)), float(_se(du[:, 0])), float(_se(du[:, 1])),
                float(run.shares[:, 0].mean()), float(run.shares[:, 1].mean()),
                float(_se(run.shares[:, 0])), float(_se(run.shares[:, 1])),
                float(mu - base_mu), solver.oracle_calls,
            ))
    return cells


__all__ = [
    "AuctionConfig",
    "BatchResult",
    "Trajectory",
    "MonteCarloSummary",
    "EpicReport",
    "IRReport",
    "ExperimentCell",
    "EXPERIMENT_COLUMNS",
    "draw_uniforms",
    "uniforms_to_values",
    "simulate_batch",
    "simulate",
    "run_auction",
    "summarize",
    "monte_carlo",
    "reachable_states",
    "verify_epic",
    "verify_ir",
    "experiment_grid",
    "worker_count",
]
