"""Integrals of allocation regions under the distribution of group maxima.

A region in which group ``own`` beats group ``other`` has the form

    {phi_own(v_own) - phi_other(v_other) >= shift,  phi_own(v_own) >= floor}

where ``v_g`` is the highest value in group ``g``.  Integrating out
``v_other`` in closed form (its max-order CDF) leaves a one-dimensional
integral over the quantile of ``v_own``, which is evaluated by adaptive
Gauss-Legendre quadrature split at every kink of the integrand.
"""

from __future__ import annotations

import math

import numpy as np
from numpy.polynomial.legendre import leggauss

from .dist import ValueDistribution
from .errors import NumericalError

QUAD_TOL = 1e-11
MAX_SEGMENTS = 4000

_LOW = leggauss(20)
_HIGH = leggauss(40)


def adaptive_gauss_legendre(func, breakpoints, tol=QUAD_TOL):
    """Integrate the vector-valued ``func`` over consecutive breakpoints.

    ``func(x)`` maps an array of nodes to an array of shape ``(k, len(x))``.
    Each segment is accepted when the 20- and 40-point rules agree to within
    its share of ``tol``; otherwise it is bisected.
    """
    total = None
    err_total = 0.0
    span = breakpoints[-1] - breakpoints[0]
    if span <= 0:
        return np.zeros(0), 0.0
    stack = [(a, b) for a, b in zip(breakpoints[:-1], breakpoints[1:]) if b > a]
    n_segments = 0
    while stack:
        a, b = stack.pop()
        n_segments += 1
        if n_segments > MAX_SEGMENTS:
            raise NumericalError(f"quadrature did not converge within {MAX_SEGMENTS} segments")
        half, mid = 0.5 * (b - a), 0.5 * (a + b)
        lo = func(mid + half * _LOW[0]) @ _LOW[1] * half
        hi = func(mid + half * _HIGH[0]) @ _HIGH[1] * half
        err = float(np.max(np.abs(hi - lo)))
        if err <= tol * (b - a) / span or b - a < 1e-13 * span:
            total = hi if total is None else total + hi
            err_total += err
        else:
            stack.extend([(a, mid), (mid, b)])
    return total, err_total


def _quantile_breaks(own, other, shift, q_floor):
    qs = {q_floor, 1.0}
    if other is not None and math.isfinite(shift):
        ys = [other.phi_lo, other.phi_hi]
        for k in other.kinks():
            eps = 1e-12 * max(1.0, abs(k))
            ys.extend([float(other.virtual_value(k - eps)), float(other.virtual_value(k + eps))])
        for y in ys:
            target = y + shift
            if own.phi_lo < target < own.phi_hi:
                qs.add(float(own.cdf(own.vv_preimage(target))))
    for k in own.kinks():
        qs.add(float(own.cdf(k)))
    return sorted(q for q in qs if q_floor <= q <= 1.0)


def region_moments(
    own: ValueDistribution,
    other: ValueDistribution | None,
    n_own: int,
    n_other: int,
    shift: float = -math.inf,
    floor: float = -math.inf,
    tol: float = QUAD_TOL,
) -> np.ndarray:
    """Return ``[P(region), int phi_own dF, int rent_own dF]`` over the region.

    The measure is that of ``(max of n_own draws, max of n_other draws)``.
    ``shift = -inf`` means ``own`` wins regardless of ``other``.
    """
    if n_own == 0:
        return np.zeros(3)
    if floor == -math.inf or floor <= own.phi_lo:
        q_floor = 0.0
    elif floor > own.phi_hi:
        return np.zeros(3)
    else:
        q_floor = float(own.cdf(own.vv_preimage(floor)))
    if q_floor >= 1.0:
        return np.zeros(3)
    use_other = other is not None and n_other > 0 and math.isfinite(shift)
    if other is not None and n_other > 0 and shift == math.inf:
        return np.zeros(3)

    def integrand(q):
        v = own.ppf(q)
        w = n_own * q ** (n_own - 1) if n_own > 1 else np.ones_like(q)
        if use_other:
            u = other.vv_preimage(own.virtual_value(v) - shift)
            w = w * other.cdf(u) ** n_other
        return np.vstack([w, own.virtual_value(v) * w, own.rent(v) * w])

    breaks = _quantile_breaks(own, other if use_other else None, shift, q_floor)
    total, err = adaptive_gauss_legendre(integrand, breaks, tol)
    if err > 1e-7:
        raise NumericalError(f"region integral error estimate {err:.2e} exceeds 1e-7")
    return np.asarray(total, dtype=float)
