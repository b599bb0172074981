"""Shared test oracles: independent inverters and FD noise bounds."""

import math

import numpy as np
from scipy.special import lambertw

from carrieralloc.utility import LogarithmicUtility, SigmoidalUtility

EPS = float(np.finfo(float).eps)


def log_demand_lambertw(k: float, p: float) -> float:
    """Independent inverter of the logarithmic marginal: (1+kr)ln(1+kr) = k/p."""
    t = math.exp(float(lambertw(k / p).real))
    return (t - 1.0) / k


def sig_demand_closed_form(a: float, b: float, p: float) -> float:
    """Independent inverter of the sigmoidal marginal via its quadratic in s."""
    d = 1.0 / (1.0 + math.exp(min(a * b, 700.0)))
    s = ((a - p) + math.sqrt((a - p) ** 2 + 4.0 * a * p * d)) / (2.0 * a)
    return b + math.log(s / (1.0 - s)) / a


def random_utilities(rng, n):
    """Parameter draws covering both families over the documented ranges."""
    out = []
    for _ in range(n):
        if rng.random() < 0.5:
            out.append(
                SigmoidalUtility(a=rng.uniform(0.5, 10.0), b=rng.uniform(5.0, 50.0))
            )
        else:
            out.append(
                LogarithmicUtility(
                    k=rng.uniform(0.1, 20.0), r_max=rng.uniform(50.0, 200.0)
                )
            )
    return out


def ln_u_roundoff(u, r: float, h: float) -> float:
    """Absolute FP error bound of one ln U evaluation near r.

    The sigmoidal ln U is assembled from terms of magnitude ~a*r and a*b, so
    its absolute error scales with those even where the value itself is O(1).
    """
    if isinstance(u, SigmoidalUtility):
        scale = 1.0 + u.a * (r + h) + u.a * u.b
    else:
        scale = 1.0 + abs(u.log_utility(max(r, 1e-12)))
    return EPS * scale


def fd_marginal_tolerance(u, r: float, h: float) -> float:
    """Noise floor of the central first difference of ln U with step h."""
    return 4.0 * ln_u_roundoff(u, r, h) / h


def second_diff_tolerance(u, r: float, h: float) -> float:
    """Noise floor of the (undivided) second central difference of ln U."""
    return 16.0 * ln_u_roundoff(u, r, h)
