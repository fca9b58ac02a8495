"""Backward induction for the optimal fair dynamic auction.

States are residual minimum allocations ``(R1, R2)`` at round ``t``: the
discounted allocation each group is still owed, measured in units of the
current round's weight.  Each round falls in one of four regimes:

* ``infeasible``: neither child state can still meet the constraints;
* ``forced``: only one group may receive the item (Vickrey within that group);
* ``both_feasible``: group 1 wins iff ``phi1 - phi2 >= theta``, with a
  participation reward for the winning group and an entry fee for everyone;
* ``last_round``: the static fair auction at levels ``(R1, R2)``.

Discounting is described by per-round weights ``w_t`` (``delta**(t-1)`` for
the exact mechanism).  ``rho_t = w_{t+1} / w_t`` plays the role of the
one-step discount factor.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .dist import GroupProfile
from .errors import InfeasibleError, ParameterError, RegimeError
from .quadrature import region_moments
from .static_solver import (
    AffineRule,
    allocate_groups,
    group_region_moments,
    solve_static,
    threshold_bid,
    top_two,
)

FEAS_TOL = 1e-9

INFEASIBLE = "infeasible"
FORCED = "forced"
BOTH_FEASIBLE = "both_feasible"
LAST_ROUND = "last_round"


@dataclass(frozen=True)
class ResidualState:
    t: int
    r1: float
    r2: float
    key: tuple = field(compare=False, default=())

    @property
    def residuals(self) -> tuple[float, float]:
        return self.r1, self.r2


@dataclass(frozen=True)
class InterimValues:
    feasible: bool
    mu: float
    nu1: float
    nu2: float

    @classmethod
    def infeasible(cls) -> "InterimValues":
        return cls(False, -math.inf, -math.inf, -math.inf)

    def nu(self, group: int) -> float:
        return self.nu1 if group == 1 else self.nu2


@dataclass(frozen=True)
class DeltaTriple:
    d1: float
    d2: float
    d0: float

    def d(self, group: int) -> float:
        return self.d1 if group == 1 else self.d2


ZERO_DELTAS = DeltaTriple(0.0, 0.0, 0.0)


@dataclass(frozen=True)
class RoundMechanism:
    """Everything needed to allocate and price one round."""

    regime: str
    t: int
    dists: tuple
    rho: float = 1.0
    group: int | None = None
    threshold: float | None = None
    deltas: DeltaTriple = ZERO_DELTAS
    zeta1: float = 0.0
    zeta2: float = 0.0
    static_rule: AffineRule | None = None

    @property
    def rule(self) -> AffineRule | None:
        """Group-level allocation rule (None for forced and infeasible rounds)."""
        if self.regime == BOTH_FEASIBLE:
            return AffineRule.full(self.threshold)
        if self.regime == LAST_ROUND:
            return self.static_rule
        return None

    def zeta(self, group: int) -> float:
        return self.zeta1 if group == 1 else self.zeta2


@dataclass(frozen=True)
class PaymentBreakdown:
    """Per-buyer payment terms, arrays of shape ``(..., 2, n)`` indexed by group then buyer."""

    base: np.ndarray
    reward: np.ndarray
    entry_fee: np.ndarray

    @property
    def total(self) -> np.ndarray:
        return self.base + self.reward + self.entry_fee


def residual_init(T: int, delta: float, alpha1: float, alpha2: float) -> ResidualState:
    if not 0 < delta <= 1:
        raise ParameterError("delta must lie in (0, 1]")
    if T < 1:
        raise ParameterError("T must be at least 1")
    scale = float(T) if delta == 1 else (1.0 - delta**T) / (1.0 - delta)
    return ResidualState(1, alpha1 * scale, alpha2 * scale, (1, (), (0, 0)))


def residual_update(state: ResidualState, winner: int, rho: float) -> ResidualState:
    """Residuals after ``winner`` (0, 1 or 2) receives the item; clamped at zero."""
    x1, x2 = float(winner == 1), float(winner == 2)
    r1 = max(0.0, (state.r1 - x1) / rho)
    r2 = max(0.0, (state.r2 - x2) / rho)
    key = _advance_key(state.key, state.t, winner, rho) if state.key else ()
    return ResidualState(state.t + 1, r1, r2, key)


def _advance_key(key, t, winner, rho):
    # within a run of unit discount ratios only win counts matter
    _, closed, (w1, w2) = key
    open_counts = (w1 + (winner == 1), w2 + (winner == 2))
    if rho != 1.0:
        return (t + 1, closed + (open_counts,), (0, 0))
    return (t + 1, closed, open_counts)


def terminal_feasible(r1: float, r2: float) -> bool:
    return r1 <= 1 + FEAS_TOL and r2 <= 1 + FEAS_TOL and r1 + r2 <= 1 + FEAS_TOL


def discount_weights(T: int, delta: float) -> np.ndarray:
    return delta ** np.arange(T, dtype=float)


class DynamicSolver:
    """Memoised backward induction over residual states.

    Parameters
    ----------
    profile:
        Per-round distributions and the group size ``n``; its length is the horizon.
    alphas:
        Fairness levels; the initial residuals are ``alpha_i * sum(weights)``.
    delta, weights:
        Either a constant discount factor or an explicit weight sequence.
    final_must_allocate:
        Force the last round to allocate (used when the solver covers only a
        prefix of a longer auction).
    """

    def __init__(
        self,
        profile: GroupProfile,
        alphas: Sequence[float],
        delta: float | None = None,
        weights: Sequence[float] | None = None,
        final_must_allocate: bool = False,
    ):
        T = profile.horizon
        if weights is None:
            if delta is None:
                raise ParameterError("give either delta or weights")
            if not 0 < delta <= 1:
                raise ParameterError("delta must lie in (0, 1]")
            weights = discount_weights(T, delta)
        weights = np.asarray(weights, dtype=float)
        if weights.shape != (T,) or np.any(weights <= 0):
            raise ParameterError("need one positive weight per round")
        a1, a2 = (float(a) for a in alphas)
        if a1 < 0 or a2 < 0:
            raise ParameterError("allocation levels must be non-negative")
        self.profile = profile
        self.n = profile.n
        self.horizon = T
        self.weights = weights / weights[0]
        self.alphas = (a1, a2)
        self.final_must_allocate = final_must_allocate
        self._feasible: dict = {}
        self._mech: dict = {}
        self._interim: dict = {}
        self.oracle_calls = 0

    # -- states ---------------------------------------------------------------

    def rho(self, t: int) -> float:
        """Discount ratio between round ``t`` and ``t+1``."""
        if t >= self.horizon:
            return 1.0
        return float(self.weights[t] / self.weights[t - 1])

    def root(self) -> ResidualState:
        total = float(self.weights.sum())
        a1, a2 = self.alphas
        return ResidualState(1, a1 * total, a2 * total, (1, (), (0, 0)))

    def child(self, state: ResidualState, winner: int) -> ResidualState:
        return residual_update(state, winner, self.rho(state.t))

    @property
    def memo_size(self) -> int:
        return len(set(self._feasible) | set(self._interim))

    # -- feasibility ----------------------------------------------------------

    def feasible(self, state: ResidualState) -> bool:
        hit = self._feasible.get(state.key)
        if hit is not None:
            return hit
        if state.t == self.horizon:
            ok = terminal_feasible(state.r1, state.r2)
        else:
            ok = self.feasible(self.child(state, 1)) or self.feasible(self.child(state, 2))
        self._feasible[state.key] = ok
        return ok

    # -- per-round quantities -------------------------------------------------

    def deltas(self, state: ResidualState) -> DeltaTriple:
        """Continuation gaps between the two possible children."""
        if state.t >= self.horizon:
            raise RegimeError("no deltas in the last round")
        c1, c2 = self.child(state, 1), self.child(state, 2)
        if not (self.feasible(c1) and self.feasible(c2)):
            raise RegimeError(f"deltas need both children feasible at t={state.t}")
        i1, i2 = self.interim(c1), self.interim(c2)
        return DeltaTriple(i2.nu1 - i1.nu1, i1.nu2 - i2.nu2, i1.mu - i2.mu)

    def zeta(self, state: ResidualState, group: int) -> float:
        """Probability that ``group`` wins when it fields one buyer fewer."""
        return self._zeta(state.t, self.deltas(state), group)

    def _zeta(self, t: int, d: DeltaTriple, group: int) -> float:
        n = self.n
        if n == 1:
            return 0.0
        rho = self.rho(t)
        dists = self.profile.round(t)
        if group == 1:
            theta = (n - 1) * rho * d.d1 - n * rho * d.d2 - rho * d.d0
            counts = (n - 1, n)
        else:
            # group 2 wins iff phi2 - phi1 >= theta2, i.e. phi1 - phi2 <= -theta2
            theta = -((n - 1) * rho * d.d2 - n * rho * d.d1 + rho * d.d0)
            counts = (n, n - 1)
        return float(group_region_moments(AffineRule.full(theta), dists, counts, group)[0])

    def solve_round(self, state: ResidualState) -> RoundMechanism:
        hit = self._mech.get(state.key)
        if hit is None:
            self._compute(state)
            hit = self._mech[state.key]
        return hit

    def interim(self, state: ResidualState) -> InterimValues:
        hit = self._interim.get(state.key)
        if hit is None:
            self._compute(state)
            hit = self._interim[state.key]
        return hit

    def solve(self) -> InterimValues:
        """Interim values at the root; raises if the instance is infeasible."""
        root = self.root()
        if not self.feasible(root):
            raise InfeasibleError(self._infeasible_message(root), state=root)
        return self.interim(root)

    def _infeasible_message(self, state):
        if state.t == self.horizon:
            return f"infeasible at t={state.t}: R=({state.r1:.6g}, {state.r2:.6g})"
        kids = [self.child(state, g) for g in (1, 2)]
        parts = ", ".join(f"group {g} wins -> R=({c.r1:.6g}, {c.r2:.6g})" for g, c in zip((1, 2), kids))
        return f"infeasible at t={state.t}, R=({state.r1:.6g}, {state.r2:.6g}): {parts}"

    def _compute(self, state: ResidualState):
        t, n, key = state.t, self.n, state.key
        dists = self.profile.round(t)
        rho = self.rho(t)
        if not self.feasible(state):
            self._mech[key] = RoundMechanism(INFEASIBLE, t, dists, rho)
            self._interim[key] = InterimValues.infeasible()
            return
        self.oracle_calls += 1
        if t == self.horizon:
            self._last_round(state, dists)
            return
        c1, c2 = self.child(state, 1), self.child(state, 2)
        ok1, ok2 = self.feasible(c1), self.feasible(c2)
        if ok1 and ok2:
            self._both_feasible(state, dists, rho, c1, c2)
            return
        g = 1 if ok1 else 2
        kid = self.interim(c1 if ok1 else c2)
        mom = region_moments(dists[g - 1], None, n, 0)
        own = mom[2] / n + rho * kid.nu(g)
        other = rho * kid.nu(3 - g)
        nu1, nu2 = (own, other) if g == 1 else (other, own)
        self._mech[key] = RoundMechanism(FORCED, t, dists, rho, group=g)
        self._interim[key] = InterimValues(True, float(mom[1] + rho * kid.mu), float(nu1), float(nu2))

    def _last_round(self, state, dists):
        a1, a2 = max(0.0, state.r1), max(0.0, state.r2)
        excess = a1 + a2 - 1.0
        if excess > 0:
            # within feasibility slack: shave the excess off proportionally
            a1, a2 = a1 / (1 + excess), a2 / (1 + excess)
        a1, a2 = min(a1, 1.0), min(a2, 1.0)
        sol = solve_static(dists, self.n, a1, a2, must_allocate=self.final_must_allocate)
        self._mech[state.key] = RoundMechanism(LAST_ROUND, state.t, dists, 1.0, static_rule=sol.rule)
        self._interim[state.key] = InterimValues(True, sol.seller_utility, sol.buyer_utility_1, sol.buyer_utility_2)

    def _both_feasible(self, state, dists, rho, c1, c2):
        n, t = self.n, state.t
        i1, i2 = self.interim(c1), self.interim(c2)
        d = DeltaTriple(i2.nu1 - i1.nu1, i1.nu2 - i2.nu2, i1.mu - i2.mu)
        theta = n * rho * (d.d1 - d.d2) - rho * d.d0
        rule = AffineRule.full(theta)
        m1 = group_region_moments(rule, dists, (n, n), 1)
        m2 = group_region_moments(rule, dists, (n, n), 2)
        z1, z2 = self._zeta(t, d, 1), self._zeta(t, d, 2)
        p1, p2 = m1[0], m2[0]
        nu1 = m1[2] / n + rho * i2.nu1 - rho * d.d1 * z1
        nu2 = m2[2] / n + rho * i1.nu2 - rho * d.d2 * z2
        mu = (
            m1[1] + m2[1]
            + rho * (p1 * i1.mu + p2 * i2.mu)
            + rho * n * (d.d1 * (z1 - p1) + d.d2 * (z2 - p2))
        )
        self._mech[state.key] = RoundMechanism(
            BOTH_FEASIBLE, t, dists, rho, threshold=float(theta), deltas=d, zeta1=z1, zeta2=z2
        )
        self._interim[state.key] = InterimValues(True, float(mu), float(nu1), float(nu2))

    # -- execution ------------------------------------------------------------

    def payment(self, state: ResidualState, bids1, bids2, reward_scale=1.0, fee_scale=1.0) -> PaymentBreakdown:
        return payment_dynamic(self.solve_round(state), bids1, bids2, reward_scale, fee_scale)


def resolve_round(mech: RoundMechanism, bids1, bids2, reward_scale=1.0, fee_scale=1.0):
    """Allocate and price a batch of auctions that share one round mechanism.

    ``bids1`` and ``bids2`` have shape ``(m, n)`` (or ``(n,)`` for one auction).
    Returns ``(winner_group, winner_index, PaymentBreakdown)``; the group is 0
    and the index -1 when the item is kept.  ``reward_scale`` and ``fee_scale``
    multiply the reward and entry-fee terms (1 for the optimal mechanism).
    """
    b1 = np.asarray(bids1, dtype=float)
    b2 = np.asarray(bids2, dtype=float)
    single = b1.ndim == 1
    b1, b2 = np.atleast_2d(b1), np.atleast_2d(b2)
    m, n = b1.shape
    rows = np.arange(m)
    d1, d2 = mech.dists
    top1, k1, sec1 = top_two(b1)
    top2, k2, sec2 = top_two(b2)
    base = np.zeros((m, 2, n))
    reward = np.zeros((m, 2, n))
    fee = np.zeros((m, 2, n))

    if mech.regime == INFEASIBLE:
        raise InfeasibleError(f"round {mech.t} has no feasible mechanism")
    if mech.regime == FORCED:
        g = mech.group
        winner = np.full(m, g)
        k, sec = (k1, sec1) if g == 1 else (k2, sec2)
        base[rows, g - 1, k] = np.maximum(sec, mech.dists[g - 1].support_lo)
    else:
        rule = mech.rule
        winner = allocate_groups(rule, mech.dists, top1, top2)
        f1, f2 = rule.floors
        thr1 = threshold_bid(d1, sec1, d2.virtual_value(top2), rule.gamma, f1)
        thr2 = threshold_bid(d2, sec2, d1.virtual_value(top1), -rule.gamma, f2)
        base[rows, 0, k1] = np.where(winner == 1, thr1, 0.0)
        base[rows, 1, k2] = np.where(winner == 2, thr2, 0.0)
        if mech.regime == BOTH_FEASIBLE:
            for g in (1, 2):
                dg = mech.deltas.d(g)
                reward[:, g - 1, :] = np.where(winner == g, -mech.rho * dg * reward_scale, 0.0)[:, None]
                fee[:, g - 1, :] = mech.rho * dg * mech.zeta(g) * fee_scale
    buyer = np.where(winner == 1, k1, np.where(winner == 2, k2, -1))
    pay = PaymentBreakdown(base, reward, fee)
    if single:
        pay = PaymentBreakdown(base[0], reward[0], fee[0])
        return int(winner[0]), int(buyer[0]), pay
    return winner, buyer, pay


def payment_dynamic(mech: RoundMechanism, bids1, bids2, reward_scale=1.0, fee_scale=1.0) -> PaymentBreakdown:
    """Payment terms of every buyer for one auction (or a batch) under ``mech``."""
    return resolve_round(mech, bids1, bids2, reward_scale, fee_scale)[2]


__all__ = [
    "ResidualState",
    "InterimValues",
    "DeltaTriple",
    "RoundMechanism",
    "PaymentBreakdown",
    "DynamicSolver",
    "residual_init",
    "residual_update",
    "terminal_feasible",
    "discount_weights",
    "resolve_round",
    "payment_dynamic",
    "INFEASIBLE",
    "FORCED",
    "BOTH_FEASIBLE",
    "LAST_ROUND",
]
