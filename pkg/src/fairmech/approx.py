"""Approximation schemes with polynomially many state solves.

``early_stop`` enforces the fairness constraint only over the first ``t0``
rounds, where ``delta**t0 <= epsilon``, at levels ``alpha_i - epsilon``.  Later
rounds run the unconstrained auction (threshold 0, reserve only in the last
round).  ``bucketed`` additionally treats the discount as constant inside
buckets of ``ell`` rounds, so states inside a bucket merge by win counts.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dist import GroupProfile
from .dynamic_solver import (
    BOTH_FEASIBLE,
    FORCED,
    LAST_ROUND,
    DynamicSolver,
    RoundMechanism,
    discount_weights,
)
from .errors import ParameterError
from .quadrature import region_moments
from .static_solver import group_region_moments, solve_static

TAIL_POLICY = "threshold-0 allocation each round, reserve at zero virtual value in the last round"


@dataclass(frozen=True)
class ApproxPlan:
    scheme: str
    T: int
    delta: float
    alphas: tuple[float, float]
    t0: int
    epsilon: float
    levels: tuple[float, float]
    guarantee: tuple[float, float]
    weights: tuple[float, ...]
    oracle_bound: int
    complexity_bound: float
    beta: float | None = None
    bucket_len: int = 1
    tail: str = TAIL_POLICY


def _check_common(T, delta, alphas, epsilon):
    if T < 1:
        raise ParameterError("T must be at least 1")
    if not 0 < delta <= 1:
        raise ParameterError("delta must lie in (0, 1]")
    a1, a2 = (float(a) for a in alphas)
    if a1 < 0 or a2 < 0 or a1 + a2 > 1 + 1e-12:
        raise ParameterError("need alpha_i >= 0 and alpha1 + alpha2 <= 1")
    if not 0 <= epsilon <= min(a1, a2):
        raise ParameterError(f"epsilon must lie in [0, min(alpha)] = [0, {min(a1, a2):.6g}]")
    return a1, a2


def stopping_round(delta: float, epsilon: float) -> int:
    """Smallest ``t`` with ``delta**t <= epsilon``."""
    if epsilon <= 0:
        return math.inf
    if epsilon >= 1:
        return 0
    return math.ceil(math.log(epsilon) / math.log(delta) - 1e-12)


def _exact_plan(T, delta, alphas):
    return ApproxPlan(
        "exact", T, delta, alphas, T, 0.0, alphas, alphas,
        tuple(float(x) for x in discount_weights(T, delta)), T * (T + 1) // 2, float(T * T),
    )


def plan_early_stop(T: int, delta: float, alphas, epsilon: float) -> ApproxPlan:
    a1, a2 = _check_common(T, delta, alphas, epsilon)
    if delta == 1:
        return _exact_plan(T, delta, (a1, a2))
    t0 = max(1, min(T, stopping_round(delta, epsilon)))
    levels = (a1 - epsilon, a2 - epsilon)
    guarantee = tuple((1 - epsilon) * lv for lv in levels)
    bound = (1 / epsilon) ** (1 / math.log(1 / delta)) if epsilon > 0 else math.inf
    return ApproxPlan(
        "early_stop", T, delta, (a1, a2), t0, epsilon, levels, guarantee,
        tuple(float(x) for x in discount_weights(t0, delta)), 2**t0, bound,
    )


def bucket_length(delta: float, beta: float) -> int:
    """Largest ``ell`` with ``delta**ell >= 1 - beta``."""
    if not 1 - delta < beta < 1:
        raise ParameterError("beta must lie in (1 - delta, 1)")
    return max(1, math.floor(math.log(1 - beta) / math.log(delta) + 1e-12))


def _bucket_state_count(t0, ell):
    # keys at round t: (ell+1) choices per closed bucket times open-bucket counts
    total = 0
    for t in range(1, t0 + 1):
        k, s = divmod(t - 1, ell)
        total += (ell + 1) ** k * (s + 1)
    return total


def plan_bucketed(T: int, delta: float, alphas, epsilon: float, beta: float) -> ApproxPlan:
    a1, a2 = _check_common(T, delta, alphas, epsilon)
    if delta == 1:
        return _exact_plan(T, delta, (a1, a2))
    ell = bucket_length(delta, beta)
    t0 = max(1, min(T, stopping_round(delta, epsilon)))
    t0 = min(T, ell * math.ceil(t0 / ell))
    weights = tuple(delta ** (ell * ((t - 1) // ell)) for t in range(1, t0 + 1))
    levels = ((1 - beta) * (a1 - epsilon), (1 - beta) * (a2 - epsilon))
    guarantee = tuple((1 - epsilon) * (1 - beta) * lv for lv in levels)
    exponent = (1 / beta) * math.log(1 / (1 - delta)) + 1
    bound = (1 / epsilon) ** exponent if epsilon > 0 else math.inf
    states = min(_bucket_state_count(t0, ell), 2**t0 - 1)
    return ApproxPlan(
        "bucketed", T, delta, (a1, a2), t0, epsilon, levels, guarantee,
        weights, states, bound, beta=beta, bucket_len=ell,
    )


@dataclass(frozen=True)
class TailState:
    t: int

    @property
    def key(self):
        return ("tail", self.t)


class PlanPolicy:
    """Executable form of a plan: exact fair phase, then the unconstrained tail."""

    def __init__(self, plan: ApproxPlan, profile: GroupProfile):
        if profile.horizon != plan.T:
            raise ParameterError("profile horizon must equal the plan's T")
        self.plan = plan
        self.profile = profile
        self.n = profile.n
        self.horizon = plan.T
        self.fair = DynamicSolver(
            profile.truncated(plan.t0), plan.levels, weights=plan.weights,
            final_must_allocate=plan.t0 < plan.T,
        )
        self._tail: dict = {}

    @property
    def oracle_calls(self) -> int:
        return self.fair.oracle_calls

    def root(self):
        return self.fair.root()

    def child(self, state, winner):
        if isinstance(state, TailState) or state.t >= self.plan.t0:
            return TailState(state.t + 1)
        return self.fair.child(state, winner)

    def feasible(self, state) -> bool:
        return True if isinstance(state, TailState) else self.fair.feasible(state)

    def solve(self):
        return self.fair.solve()

    def solve_round(self, state) -> RoundMechanism:
        if not isinstance(state, TailState):
            return self.fair.solve_round(state)
        hit = self._tail.get(state.t)
        if hit is None:
            dists = self.profile.round(state.t)
            if state.t == self.horizon:
                rule = solve_static(dists, self.n, 0.0, 0.0).rule
                hit = RoundMechanism(LAST_ROUND, state.t, dists, static_rule=rule)
            else:
                hit = RoundMechanism(BOTH_FEASIBLE, state.t, dists, threshold=0.0)
            self._tail[state.t] = hit
        return hit


def round_expectations(mech: RoundMechanism, n: int):
    """Expected revenue, per-buyer utility of each group, and win probabilities for one round."""
    if mech.regime == FORCED:
        g = mech.group
        mom = region_moments(mech.dists[g - 1], None, n, 0)
        util = np.zeros(2)
        probs = np.zeros(2)
        util[g - 1], probs[g - 1] = mom[2] / n, 1.0
        return float(mom[1]), util, probs
    rule = mech.rule
    m = [group_region_moments(rule, mech.dists, (n, n), g) for g in (1, 2)]
    probs = np.array([m[0][0], m[1][0]])
    revenue = m[0][1] + m[1][1]
    util = np.array([m[0][2] / n, m[1][2] / n])
    if mech.regime == BOTH_FEASIBLE:
        for g in (1, 2):
            transfer = mech.rho * mech.deltas.d(g) * (mech.zeta(g) - probs[g - 1])
            revenue += n * transfer
            util[g - 1] -= transfer
    return float(revenue), util, probs


@dataclass(frozen=True)
class PolicyValues:
    mu: float
    nu: np.ndarray
    shares: np.ndarray


def policy_values(policy, delta: float) -> PolicyValues:
    """Expected revenue, per-buyer utilities and discounted group shares of a policy.

    Computed by exact recursion over the policy's state tree with true
    discount ``delta``, independently of the weights the policy was solved with.
    """
    T = policy.horizon
    w = discount_weights(T, delta)
    memo: dict = {}

    def value(state):
        hit = memo.get(state.key)
        if hit is not None:
            return hit
        mech = policy.solve_round(state)
        rev, util, probs = round_expectations(mech, policy.n)
        share = probs.copy()
        if state.t < T:
            ratio = w[state.t] / w[state.t - 1]
            for g in (1, 2):
                if probs[g - 1] > 0:
                    r2, u2, s2 = value(policy.child(state, g))
                    rev += ratio * probs[g - 1] * r2
                    util = util + ratio * probs[g - 1] * u2
                    share = share + ratio * probs[g - 1] * s2
        memo[state.key] = (rev, util, share)
        return memo[state.key]

    rev, util, share = value(policy.root())
    return PolicyValues(float(rev), util, share / w.sum())


@dataclass
class PlanExecution:
    plan: ApproxPlan
    mechanisms: list
    trajectory: object
    oracle_calls: int


def execute_plan(plan: ApproxPlan, config, rng=None) -> PlanExecution:
    """Solve the fair phase and run one truthful trajectory under the plan."""
    from .sim import run_auction

    policy = make_policy(plan, config.profile)
    policy.solve()
    traj = run_auction(config, rng, policy=policy)
    mechs = [policy.solve_round(s) for s in traj.states]
    return PlanExecution(plan, mechs, traj, policy_oracle_calls(policy))


def make_policy(plan: ApproxPlan, profile: GroupProfile):
    if plan.scheme == "exact":
        return DynamicSolver(profile, plan.alphas, delta=plan.delta)
    return PlanPolicy(plan, profile)


def policy_oracle_calls(policy) -> int:
    return policy.oracle_calls


__all__ = [
    "ApproxPlan",
    "PlanPolicy",
    "PlanExecution",
    "PolicyValues",
    "TailState",
    "plan_early_stop",
    "plan_bucketed",
    "bucket_length",
    "stopping_round",
    "execute_plan",
    "make_policy",
    "policy_values",
    "round_expectations",
]
