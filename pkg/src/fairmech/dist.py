"""Value distributions and their Myerson virtual values.

Every distribution exposes ``cdf``, ``pdf``, ``ppf``, ``rent`` (the
information rent ``(1 - F) / f``) and ``virtual_value``; all of them accept a
float or a numpy array.  Instances are immutable and validated for
regularity when constructed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DomainError, ParameterError, RangeError, RegularityError

REGULARITY_GRID = 1000
REGULARITY_TOL = 1e-9
BISECTION_MAX_ITER = 200
BISECTION_XTOL = 1e-14


def bisect_increasing(func, target, lo, hi, max_iter=BISECTION_MAX_ITER, xtol=BISECTION_XTOL):
    """Return ``sup{x in [lo, hi] : func(x) <= target}`` for non-decreasing ``func``.

    Works elementwise when ``target`` is an array.  Targets below ``func(lo)``
    map to ``lo`` and targets at or above ``func(hi)`` map to ``hi``.
    """
    target = np.asarray(target, dtype=float)
    a = np.full(target.shape, float(lo))
    b = np.full(target.shape, float(hi))
    scale = max(1.0, abs(lo), abs(hi))
    for _ in range(max_iter):
        mid = 0.5 * (a + b)
        below = func(mid) <= target
        a = np.where(below, mid, a)
        b = np.where(below, b, mid)
        if np.all(b - a <= xtol * scale):
            break
    out = 0.5 * (a + b)
    out = np.where(target >= func(float(hi)), hi, out)
    out = np.where(target < func(float(lo)), lo, out)
    return out if out.ndim else float(out)


class ValueDistribution:
    """Base class; subclasses fill in the analytic pieces."""

    kind: str = ""
    support_lo: float
    support_hi: float

    def _validate(self):
        if not self.support_lo < self.support_hi:
            raise ParameterError(f"{self.kind}: need support_lo < support_hi")
        grid = np.linspace(self.support_lo, self.support_hi, REGULARITY_GRID)
        if not np.all(self.pdf(grid[:-1]) > 0):
            raise ParameterError(f"{self.kind}: density must be positive on the support")
        phi = self.virtual_value(grid)
        if np.any(np.diff(phi) < -REGULARITY_TOL):
            worst = float(np.min(np.diff(phi)))
            raise RegularityError(f"{self.kind}: virtual value decreases by {-worst:.3g} on the grid")

    # numeric primitives -------------------------------------------------

    def cdf(self, v):
        raise NotImplementedError

    def pdf(self, v):
        raise NotImplementedError

    def ppf(self, q):
        raise NotImplementedError

    def rent(self, v):
        return (1.0 - self.cdf(v)) / self.pdf(v)

    def virtual_value(self, v):
        return v - self.rent(v)

    def vv_preimage(self, y):
        """Largest value whose virtual value is at most ``y``, clamped to the support."""
        return bisect_increasing(self.virtual_value, y, self.support_lo, self.support_hi)

    def kinks(self) -> tuple[float, ...]:
        """Interior points where the density is discontinuous."""
        return ()

    @property
    def phi_lo(self) -> float:
        return float(self.virtual_value(self.support_lo))

    @property
    def phi_hi(self) -> float:
        return float(self.virtual_value(self.support_hi))

    @property
    def params(self) -> tuple[float, ...]:
        raise NotImplementedError

    def sample(self, rng: np.random.Generator, size=None):
        return self.ppf(rng.random(size))

    def __repr__(self):
        return f"{type(self).__name__}{self.params}"


@dataclass(frozen=True, repr=False)
class Uniform(ValueDistribution):
    lo: float
    hi: float
    kind = "uniform"

    def __post_init__(self):
        self._validate()

    @property
    def support_lo(self):
        return self.lo

    @property
    def support_hi(self):
        return self.hi

    @property
    def params(self):
        return (self.lo, self.hi)

    def cdf(self, v):
        return np.clip((v - self.lo) / (self.hi - self.lo), 0.0, 1.0)

    def pdf(self, v):
        return 0.0 * v + 1.0 / (self.hi - self.lo)

    def ppf(self, q):
        return self.lo + q * (self.hi - self.lo)

    def rent(self, v):
        return self.hi - v

    def virtual_value(self, v):
        return 2.0 * v - self.hi

    def vv_preimage(self, y):
        return np.clip((y + self.hi) / 2.0, self.lo, self.hi)


@dataclass(frozen=True, repr=False)
class ShiftedUniform(Uniform):
    """Uniform on ``[shift, shift + width]``."""

    kind = "shifted-uniform"

    def __init__(self, width: float, shift: float = 0.0):
        object.__setattr__(self, "lo", float(shift))
        object.__setattr__(self, "hi", float(shift) + float(width))
        self._validate()

    @property
    def params(self):
        return (self.hi - self.lo, self.lo)


@dataclass(frozen=True, repr=False)
class TruncatedExponential(ValueDistribution):
    """Exponential with ``rate`` restricted to ``[lo, hi]``."""

    rate: float
    lo: float
    hi: float
    kind = "truncated-exponential"

    def __post_init__(self):
        if self.rate <= 0:
            raise ParameterError("truncated-exponential: rate must be positive")
        self._validate()

    @property
    def support_lo(self):
        return self.lo

    @property
    def support_hi(self):
        return self.hi

    @property
    def params(self):
        return (self.rate, self.lo, self.hi)

    @property
    def _mass(self):
        return -math.expm1(-self.rate * (self.hi - self.lo))

    def cdf(self, v):
        v = np.clip(v, self.lo, self.hi)
        return -np.expm1(-self.rate * (v - self.lo)) / self._mass

    def pdf(self, v):
        return self.rate * np.exp(-self.rate * (v - self.lo)) / self._mass

    def ppf(self, q):
        return self.lo - np.log1p(-q * self._mass) / self.rate

    def rent(self, v):
        return -np.expm1(-self.rate * (self.hi - v)) / self.rate


@dataclass(frozen=True, repr=False)
class Tabulated(ValueDistribution):
    """Piecewise-linear CDF through ``(xs[j], cdfs[j])``; the density is piecewise constant."""

    xs: tuple[float, ...]
    cdfs: tuple[float, ...]
    kind = "tabulated"

    def __post_init__(self):
        xs = np.asarray(self.xs, dtype=float)
        cs = np.asarray(self.cdfs, dtype=float)
        if xs.ndim != 1 or xs.shape != cs.shape or xs.size < 2:
            raise ParameterError("tabulated: xs and cdfs must be equal-length sequences (>= 2)")
        if np.any(np.diff(xs) <= 0) or np.any(np.diff(cs) <= 0):
            raise ParameterError("tabulated: xs and cdfs must be strictly increasing")
        if abs(cs[0]) > 1e-10 or abs(cs[-1] - 1.0) > 1e-10:
            raise ParameterError("tabulated: cdfs must run from 0 to 1")
        cs[0], cs[-1] = 0.0, 1.0
        object.__setattr__(self, "xs", tuple(xs))
        object.__setattr__(self, "cdfs", tuple(cs))
        object.__setattr__(self, "_x", xs)
        object.__setattr__(self, "_c", cs)
        object.__setattr__(self, "_slope", np.diff(cs) / np.diff(xs))
        self._validate()

    @property
    def support_lo(self):
        return self.xs[0]

    @property
    def support_hi(self):
        return self.xs[-1]

    @property
    def params(self):
        return tuple(self.xs) + tuple(self.cdfs)

    def kinks(self):
        return tuple(self.xs[1:-1])

    def cdf(self, v):
        return np.interp(v, self._x, self._c)

    def pdf(self, v):
        idx = np.clip(np.searchsorted(self._x, v, side="right") - 1, 0, len(self._slope) - 1)
        return self._slope[idx]

    def ppf(self, q):
        return np.interp(q, self._c, self._x)


@dataclass(frozen=True)
class GroupProfile:
    """Per-round distributions for both groups and the group size ``n``."""

    group1: tuple[ValueDistribution, ...]
    group2: tuple[ValueDistribution, ...]
    n: int = 1

    def __post_init__(self):
        object.__setattr__(self, "group1", tuple(self.group1))
        object.__setattr__(self, "group2", tuple(self.group2))
        if len(self.group1) != len(self.group2) or not self.group1:
            raise ParameterError("both groups need one distribution per round")
        if self.n < 1:
            raise ParameterError("n must be at least 1")

    @classmethod
    def constant(cls, d1, d2, T, n=1):
        return cls((d1,) * T, (d2,) * T, n)

    @property
    def horizon(self) -> int:
        return len(self.group1)

    def round(self, t: int) -> tuple[ValueDistribution, ValueDistribution]:
        """Distributions of round ``t`` (1-based)."""
        return self.group1[t - 1], self.group2[t - 1]

    def truncated(self, horizon: int) -> "GroupProfile":
        return GroupProfile(self.group1[:horizon], self.group2[:horizon], self.n)

    def with_n(self, n: int) -> "GroupProfile":
        return GroupProfile(self.group1, self.group2, n)


def make_distribution(kind: str, **fields) -> ValueDistribution:
    """Build a distribution from config-style fields."""
    kind = kind.strip().lower().replace("_", "-")
    try:
        if kind == "uniform":
            return Uniform(float(fields["lo"]), float(fields["hi"]))
        if kind == "shifted-uniform":
            return ShiftedUniform(float(fields["width"]), float(fields.get("shift", 0.0)))
        if kind == "truncated-exponential":
            return TruncatedExponential(float(fields["rate"]), float(fields["lo"]), float(fields["hi"]))
        if kind == "tabulated":
            return Tabulated(_floats(fields["x"]), _floats(fields["cdf"]))
    except KeyError as exc:
        raise ParameterError(f"{kind}: missing field {exc.args[0]!r}") from None
    raise ParameterError(f"unknown distribution kind {kind!r}")


def _floats(value) -> tuple[float, ...]:
    if isinstance(value, str):
        value = value.replace(",", " ").split()
    return tuple(float(x) for x in value)


# module-level operations ----------------------------------------------------


def _check_support(d: ValueDistribution, v: float):
    if not d.support_lo <= v <= d.support_hi:
        raise DomainError(f"{v} outside support [{d.support_lo}, {d.support_hi}]")


def virtual_value(d: ValueDistribution, v: float) -> float:
    _check_support(d, v)
    return float(d.virtual_value(v))


def inverse_virtual_value(d: ValueDistribution, phi: float) -> float:
    """The value whose virtual value is ``phi``; bisection on the monotone map."""
    lo, hi = d.phi_lo, d.phi_hi
    if not lo - 1e-12 <= phi <= hi + 1e-12:
        raise RangeError(f"virtual value {phi} outside [{lo}, {hi}]")
    return float(bisect_increasing(d.virtual_value, phi, d.support_lo, d.support_hi))


def max_order_cdf(d: ValueDistribution, n: int, v: float) -> float:
    """CDF of the maximum of ``n`` independent draws."""
    if n < 1:
        raise ParameterError("n must be at least 1")
    _check_support(d, v)
    return float(d.cdf(v)) ** n


def sample(d: ValueDistribution, rng: np.random.Generator, size=None):
    """Inverse-CDF draw(s) from ``d``."""
    out = d.sample(rng, size)
    return float(out) if size is None else out


def check_regular(d: ValueDistribution, points: int = REGULARITY_GRID) -> bool:
    grid = np.linspace(d.support_lo, d.support_hi, points)
    return bool(np.all(np.diff(d.virtual_value(grid)) >= -REGULARITY_TOL))


__all__ = [
    "ValueDistribution",
    "Uniform",
    "ShiftedUniform",
    "TruncatedExponential",
    "Tabulated",
    "GroupProfile",
    "make_distribution",
    "virtual_value",
    "inverse_virtual_value",
    "max_order_cdf",
    "sample",
    "check_regular",
    "bisect_increasing",
]
