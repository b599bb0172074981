"""Normalized utility families for rate allocation.

Two families model user satisfaction as a function of the total rate a user
receives, both normalized so that U(0) = 0:

* sigmoidal:    U(r) = c * (1 / (1 + exp(-a*(r - b))) - d)
  with c = (1 + exp(a*b)) / exp(a*b) and d = 1 / (1 + exp(a*b)), so U -> 1
  as r -> infinity.  S-shaped, models inelastic/real-time traffic with an
  inflection at rate b.
* logarithmic:  U(r) = log(1 + k*r) / log(1 + k*r_max)
  so U(r_max) = 1.  Concave, models elastic/delay-tolerant traffic.

The solver works throughout with ln U and its derivative ("marginal"),
which is strictly positive and strictly decreasing, so demand at a given
price is well defined and invertible by bisection.

All values are immutable after construction; every function here is pure.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Union

__all__ = [
    "UtilityDomainError",
    "RootFindingError",
    "SigmoidalUtility",
    "LogarithmicUtility",
    "UtilityFunction",
    "evaluate",
    "log_utility",
    "marginal",
    "solve_rate_for_price",
]

NEG_INF = float("-inf")


class UtilityDomainError(ValueError):
    """Raised for invalid utility parameters or out-of-domain arguments."""


class RootFindingError(RuntimeError):
    """Raised when the bisection inverter fails to meet its tolerance."""


def _sigmoid(x: float) -> float:
    """Numerically stable 1 / (1 + exp(-x)) via the sign-split form."""
    if x >= 0.0:
        return 1.0 / (1.0 + math.exp(-x))
    ex = math.exp(x)
    return ex / (1.0 + ex)


def _softplus(x: float) -> float:
    """Numerically stable ln(1 + exp(x))."""
    if x > 0.0:
        return x + math.log1p(math.exp(-x))
    return math.log1p(math.exp(x))


def _log_expm1(y: float) -> float:
    """Numerically stable ln(exp(y) - 1) for y > 0."""
    if y > 33.0:
        # expm1(y) would overflow long before y ~ 710; ln(e^y - 1) = y + ln(1 - e^-y)
        return y + math.log1p(-math.exp(-y))
    return math.log(math.expm1(y))


@dataclass(frozen=True)
class SigmoidalUtility:
    """S-shaped normalized utility with steepness a and inflection rate b.

    The normalization constants c and d are derived so that U(0) = 0 and
    U(inf) = 1; they are stored but all evaluation goes through
    overflow-safe expressions (a*b = 50 already overwhelms exp(a*b) paths).
    """

    a: float
    b: float
    c: float = field(init=False)
    d: float = field(init=False)

    def __post_init__(self) -> None:
        if not (self.a > 0.0 and math.isfinite(self.a)):
            raise UtilityDomainError(f"sigmoidal steepness a must be > 0, got {self.a}")
        if not (self.b > 0.0 and math.isfinite(self.b)):
            raise UtilityDomainError(f"sigmoidal inflection b must be > 0, got {self.b}")
        # c = (1 + e^{ab}) / e^{ab} = 1 + e^{-ab}, d = 1 / (1 + e^{ab}); the
        # right-hand forms stay finite for arbitrarily large a*b.
        object.__setattr__(self, "c", 1.0 + math.exp(-self.a * self.b))
        object.__setattr__(self, "d", _sigmoid(-self.a * self.b))

    def log_utility(self, r: float) -> float:
        _check_rate(r)
        if r == 0.0:
            return NEG_INF
        a, b = self.a, self.b
        # ln U = -a*b + ln(e^{a r} - 1) - ln(1 + e^{a (r - b)})
        return -a * b + _log_expm1(a * r) - _softplus(a * (r - b))

    def evaluate(self, r: float) -> float:
        _check_rate(r)
        if r == 0.0:
            return 0.0
        return math.exp(self.log_utility(r))

    def marginal(self, r: float) -> float:
        if not (r > 0.0):
            raise UtilityDomainError(f"marginal requires r > 0, got {r}")
        a, b = self.a, self.b
        # d/dr ln U = a * (1 / (1 - e^{-a r}) - sigmoid(a (r - b)))
        return a * (1.0 / (-math.expm1(-a * r)) - _sigmoid(a * (r - b)))


@dataclass(frozen=True)
class LogarithmicUtility:
    """Concave normalized utility with growth rate k and 100%-rate r_max."""

    k: float
    r_max: float

    def __post_init__(self) -> None:
        if not (self.k > 0.0 and math.isfinite(self.k)):
            raise UtilityDomainError(f"logarithmic growth k must be > 0, got {self.k}")
        if not (self.r_max > 0.0 and math.isfinite(self.r_max)):
            raise UtilityDomainError(f"logarithmic r_max must be > 0, got {self.r_max}")

    def evaluate(self, r: float) -> float:
        _check_rate(r)
        return math.log1p(self.k * r) / math.log1p(self.k * self.r_max)

    def log_utility(self, r: float) -> float:
        _check_rate(r)
        if r == 0.0:
            return NEG_INF
        return math.log(math.log1p(self.k * r)) - math.log(math.log1p(self.k * self.r_max))

    def marginal(self, r: float) -> float:
        if not (r > 0.0):
            raise UtilityDomainError(f"marginal requires r > 0, got {r}")
        kr = self.k * r
        # d/dr ln U = k / ((1 + k r) ln(1 + k r)); the r_max normalization cancels.
        return self.k / ((1.0 + kr) * math.log1p(kr))


UtilityFunction = Union[SigmoidalUtility, LogarithmicUtility]


def _check_rate(r: float) -> None:
    if not (r >= 0.0):
        raise UtilityDomainError(f"rate must be >= 0, got {r}")


def evaluate(u: UtilityFunction, r_total: float) -> float:
    """Utility value U(r_total), in [0, 1) for sigmoidal inputs.

    Logarithmic inputs may exceed r_max, in which case the value exceeds 1;
    protocol paths never produce such inputs.
    """
    return u.evaluate(r_total)


def log_utility(u: UtilityFunction, r_total: float) -> float:
    """ln U(r_total); returns -inf at r_total = 0 rather than raising."""
    return u.log_utility(r_total)


def marginal(u: UtilityFunction, r_total: float) -> float:
    """d/dr ln U at r_total > 0: strictly positive, strictly decreasing."""
    return u.marginal(r_total)


def solve_rate_for_price(u: UtilityFunction, p: float, r_cap: float) -> float:
    """Invert the marginal: the unique r in (0, r_cap] with marginal(r) = p.

    Returns r_cap when even marginal(r_cap) > p (demand hits the search
    ceiling).  Because marginal -> infinity as r -> 0+, the result is
    strictly positive for every finite p > 0.

    Bisection on the strictly decreasing marginal over [r_lo, r_cap], with
    r_lo found by geometric shrink from r_cap; at most 200 iterations,
    absolute rate tolerance 1e-12 * r_cap.
    """
    if not (p > 0.0 and math.isfinite(p)):
        raise UtilityDomainError(f"price must be > 0 and finite, got {p}")
    if not (r_cap > 0.0 and math.isfinite(r_cap)):
        raise UtilityDomainError(f"r_cap must be > 0 and finite, got {r_cap}")

    if u.marginal(r_cap) > p:
        return r_cap

    # Shrink until the marginal exceeds p; this brackets the root.
    hi = r_cap
    lo = 0.5 * r_cap
    while u.marginal(lo) <= p:
        hi = lo
        lo *= 0.5
        if lo < 5e-324:
            raise RootFindingError(
                f"bracketing collapsed inverting marginal at price {p}"
            )

    mid = 0.5 * (lo + hi)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if u.marginal(mid) > p:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-12 * r_cap and abs(u.marginal(mid) - p) <= 1e-10 * p:
            return mid
        if hi == lo or (hi - lo) < abs(mid) * 1e-17:
            return mid
    # Interval tolerance met but residual not: the marginal is too steep for
    # the requested residual at double precision.
    if hi - lo <= 1e-12 * r_cap:
        return mid
    raise RootFindingError(
        f"bisection failed to meet tolerance inverting marginal at price {p}"
    )
