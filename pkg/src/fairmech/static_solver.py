"""Optimal fair single-round auction.

The optimal rule is affine in virtual-value space: group 1 wins when
``phi1(v1) - phi2(v2) >= gamma`` and ``phi1(v1) >= -eta1``; group 2 wins when
``phi2(v2) >= phi1(v1) - gamma`` and ``phi2(v2) >= -eta2``; otherwise the item
is kept.  ``solve_static`` finds ``(gamma, eta1, eta2)`` by nested bracketing
root finds on the (monotone) group allocation probabilities.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .dist import ValueDistribution
from .errors import InfeasibleError, ParameterError
from .quadrature import region_moments

PARAM_XTOL = 1e-13
PROB_SLACK = 1e-12


class Winner(enum.IntEnum):
    NONE = 0
    GROUP1 = 1
    GROUP2 = 2


@dataclass(frozen=True)
class AffineRule:
    gamma: float = 0.0
    eta1: float = 0.0
    eta2: float = 0.0
    must_allocate: bool = False

    def __post_init__(self):
        if not self.must_allocate and (self.eta1 < 0 or self.eta2 < 0):
            raise ParameterError("reserve slacks eta1, eta2 must be non-negative")

    @classmethod
    def full(cls, gamma: float = 0.0) -> "AffineRule":
        """Rule that always allocates; only the boundary shift matters."""
        return cls(gamma, math.inf, math.inf, True)

    @property
    def floors(self) -> tuple[float, float]:
        """Lowest winning virtual value for each group."""
        if self.must_allocate:
            return -math.inf, -math.inf
        return -self.eta1, -self.eta2


@dataclass(frozen=True)
class StaticSolution:
    rule: AffineRule
    prob_g1: float
    prob_g2: float
    seller_utility: float
    buyer_utility_1: float
    buyer_utility_2: float


Dists = tuple[ValueDistribution, ValueDistribution]


def group_region_moments(rule: AffineRule, dists: Dists, counts, group: int) -> np.ndarray:
    """``[P(G_i), int_{G_i} phi_i, int_{G_i} rent_i]`` with ``counts`` buyers per group."""
    d1, d2 = dists
    n1, n2 = counts
    f1, f2 = rule.floors
    if group == 1:
        return region_moments(d1, d2, n1, n2, shift=rule.gamma, floor=f1)
    if group == 2:
        return region_moments(d2, d1, n2, n1, shift=-rule.gamma, floor=f2)
    raise ParameterError("group must be 1 or 2")


def region_probability(rule: AffineRule, dists: Dists, n: int, group: int) -> float:
    return float(group_region_moments(rule, dists, (n, n), group)[0])


def static_interim(rule: AffineRule, dists: Dists, n: int) -> tuple[float, float, float]:
    """Seller revenue and per-buyer expected utility of each group."""
    m1 = group_region_moments(rule, dists, (n, n), 1)
    m2 = group_region_moments(rule, dists, (n, n), 2)
    return float(m1[1] + m2[1]), float(m1[2] / n), float(m2[2] / n)


def allocate_groups(rule: AffineRule, dists: Dists, v1, v2):
    """Vectorised group-level allocation; returns 0 (none), 1 or 2 elementwise."""
    d1, d2 = dists
    phi1 = d1.virtual_value(np.asarray(v1, dtype=float))
    phi2 = d2.virtual_value(np.asarray(v2, dtype=float))
    f1, f2 = rule.floors
    g1 = (phi1 - phi2 >= rule.gamma) & (phi1 >= f1)
    g2 = ~g1 & (phi1 - phi2 <= rule.gamma) & (phi2 >= f2)
    return np.where(g1, 1, np.where(g2, 2, 0))


def allocate_static(rule: AffineRule, dists: Dists, v1: float, v2: float) -> Winner:
    """Winner given the two group maxima; exact boundary ties go to group 1."""
    return Winner(int(allocate_groups(rule, dists, v1, v2)))


def threshold_bid(own: ValueDistribution, second, other_phi, shift, floor=-math.inf):
    """Smallest bid with which the top bidder of ``own`` still wins.

    ``own`` wins iff ``phi_own(b) - other_phi >= shift`` and ``phi_own(b) >= floor``
    and ``b`` is at least the group's second-highest bid ``second``.
    """
    need = np.maximum(np.asarray(other_phi, dtype=float) + shift, floor)
    return np.maximum(np.asarray(second, dtype=float), own.vv_preimage(need))


def top_two(bids):
    """Highest bid, its index and the runner-up along the last axis (runner-up is -inf when n=1)."""
    bids = np.asarray(bids, dtype=float)
    idx = np.argmax(bids, axis=-1)
    top = np.take_along_axis(bids, idx[..., None], axis=-1)[..., 0]
    if bids.shape[-1] == 1:
        return top, idx, np.full(top.shape, -np.inf)
    second = np.sort(bids, axis=-1)[..., -2]
    return top, idx, second


def static_payment(rule: AffineRule, dists: Dists, bids1, bids2):
    """Per-buyer payments ``(p1, p2)``: the winner pays its threshold bid, everyone else 0."""
    d1, d2 = dists
    b1 = np.atleast_1d(np.asarray(bids1, dtype=float))
    b2 = np.atleast_1d(np.asarray(bids2, dtype=float))
    top1, k1, sec1 = top_two(b1)
    top2, k2, sec2 = top_two(b2)
    winner = int(allocate_groups(rule, dists, top1, top2))
    p1, p2 = np.zeros(b1.shape), np.zeros(b2.shape)
    f1, f2 = rule.floors
    if winner == 1:
        p1[k1] = threshold_bid(d1, sec1, d2.virtual_value(top2), rule.gamma, f1)
    elif winner == 2:
        # group 2 wins iff phi2 - phi1 >= -gamma (boundary measure zero)
        p2[k2] = threshold_bid(d2, sec2, d1.virtual_value(top1), -rule.gamma, f2)
    return p1, p2


# ---------------------------------------------------------------------------
# solver


def _probs(rule, dists, n):
    return (
        region_probability(rule, dists, n, 1),
        region_probability(rule, dists, n, 2),
    )


def _solution(rule, dists, n) -> StaticSolution:
    m1 = group_region_moments(rule, dists, (n, n), 1)
    m2 = group_region_moments(rule, dists, (n, n), 2)
    return StaticSolution(
        rule=rule,
        prob_g1=float(m1[0]),
        prob_g2=float(m2[0]),
        seller_utility=float(m1[1] + m2[1]),
        buyer_utility_1=float(m1[2] / n),
        buyer_utility_2=float(m2[2] / n),
    )


def _favouring_rule(favoured: int, subsidy: float, eta_other: float) -> AffineRule:
    # eta_favoured = eta_other + subsidy keeps eta2 = eta1 + gamma
    if favoured == 2:
        return AffineRule(subsidy, eta_other, eta_other + subsidy)
    return AffineRule(-subsidy, eta_other + subsidy, eta_other)


def _full_allocation_gamma(dists, n, alpha1, alpha2) -> float:
    d1, d2 = dists

    def p2(gamma):
        return region_probability(AffineRule.full(gamma), dists, n, 2)

    base = p2(0.0)
    if alpha2 - PROB_SLACK <= base and 1.0 - base >= alpha1 - PROB_SLACK:
        return 0.0
    if base < alpha2:
        hi = d1.phi_hi - d2.phi_lo + 1.0
        return brentq(lambda g: p2(g) - alpha2, 0.0, hi, xtol=PARAM_XTOL)
    lo = d1.phi_lo - d2.phi_hi - 1.0
    return brentq(lambda g: (1.0 - p2(g)) - alpha1, lo, 0.0, xtol=PARAM_XTOL)


def _favour_family(favoured, dists, n, alphas, eta_max):
    """Cheapest rule subsidising ``favoured``; None if the family cannot satisfy both levels."""
    other = 3 - favoured
    d_fav = dists[favoured - 1]
    d_oth = dists[other - 1]
    a_fav, a_oth = alphas[favoured - 1], alphas[other - 1]
    s_max = d_oth.phi_hi - d_fav.phi_lo + eta_max + 1.0

    def prob(group, s, eta):
        return region_probability(_favouring_rule(favoured, s, eta), dists, n, group)

    def subsidy(eta):
        if prob(favoured, 0.0, eta) >= a_fav - PROB_SLACK:
            return 0.0
        return brentq(lambda s: prob(favoured, s, eta) - a_fav, 0.0, s_max, xtol=PARAM_XTOL)

    def gap(eta):
        return prob(other, subsidy(eta), eta) - a_oth

    if gap(0.0) >= -PROB_SLACK:
        eta = 0.0
    else:
        top = gap(eta_max) if eta_max > 0 else -1.0
        if top < -1e-9:
            return None
        eta = eta_max if top < 0 else brentq(gap, 0.0, eta_max, xtol=PARAM_XTOL)
    return _favouring_rule(favoured, subsidy(eta), eta)


def solve_static(dists: Dists, n: int, alpha1: float, alpha2: float, must_allocate: bool = False) -> StaticSolution:
    """Revenue-optimal rule giving group ``i`` the item with probability at least ``alpha_i``."""
    if n < 1:
        raise ParameterError("n must be at least 1")
    if alpha1 < 0 or alpha2 < 0:
        raise ParameterError("allocation levels must be non-negative")
    if alpha1 + alpha2 > 1.0 + 1e-12:
        raise InfeasibleError(f"levels ({alpha1:.6g}, {alpha2:.6g}) exceed one item")
    if must_allocate or alpha1 + alpha2 >= 1.0 - 1e-12:
        return _solution(AffineRule.full(_full_allocation_gamma(dists, n, alpha1, alpha2)), dists, n)

    base = AffineRule()
    p1, p2 = _probs(base, dists, n)
    short1, short2 = p1 < alpha1 - PROB_SLACK, p2 < alpha2 - PROB_SLACK
    if not (short1 or short2):
        return _solution(base, dists, n)

    d1, d2 = dists
    eta_max = max(0.0, -min(d1.phi_lo, d2.phi_lo))
    favoured = [g for g, short in ((2, short2), (1, short1)) if short]
    candidates = []
    for g in favoured:
        rule = _favour_family(g, dists, n, (alpha1, alpha2), eta_max)
        if rule is not None:
            candidates.append(_solution(rule, dists, n))
    if not candidates:
        raise InfeasibleError(f"no affine rule reaches levels ({alpha1:.6g}, {alpha2:.6g})")
    # both groups short: keep the higher-revenue family, smaller |gamma| on ties
    return max(candidates, key=lambda s: (round(s.seller_utility, 10), -abs(s.rule.gamma)))


__all__ = [
    "Winner",
    "AffineRule",
    "StaticSolution",
    "allocate_static",
    "allocate_groups",
    "region_probability",
    "group_region_moments",
    "static_interim",
    "static_payment",
    "threshold_bid",
    "top_two",
    "solve_static",
]
