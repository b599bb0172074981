"""Centralized ground-truth solver and KKT certification.

Solves max sum_i ln U_i(total_i) subject to per-carrier capacities and
non-negativity, independently of the bidding protocol, so the distributed
fixed point can be checked against a certified optimum.

Two phases:

1. Projected gradient ascent.  Each capacity constraint touches a disjoint
   block of variables, so projection decomposes into per-carrier projections
   onto {x >= 0, sum x <= R} (clip, then the standard simplex threshold).
   Backtracking (halving) line search from 1.0 with Armijo constant 1e-4.

2. Active-set refinement.  The gradient phase stalls along near-flat
   directions (a sigmoidal marginal is constant to machine precision over a
   wide rate interval), so the optimum is finished combinatorially: carriers
   that share a marginal user must carry equal duals, each such group is
   cleared by bisecting the common price until aggregate demand equals
   aggregate capacity, and per-UE totals are read off the demand functions.
   This pins totals that the gradient phase would need ~1e7 iterations to
   resolve, and makes identically-parameterized users exactly symmetric.

KKT residuals of the result (or of any candidate allocation) are reported by
kkt_check; the refinement is only kept when it certifies at least as well as
the gradient iterate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .utility import (
    LogarithmicUtility,
    SigmoidalUtility,
    UtilityFunction,
    solve_rate_for_price,
)

__all__ = [
    "OracleError",
    "KKTReport",
    "OracleSolution",
    "project_carrier_block",
    "solve_central",
    "kkt_check",
    "dual_objective",
]

ARMIJO_C = 1e-4


class OracleError(RuntimeError):
    """Raised when the centralized solver cannot produce a certified solution."""


def project_carrier_block(x: np.ndarray, R: float) -> np.ndarray:
    """Euclidean projection of a vector onto {x >= 0, sum(x) <= R}.

    Clips negatives; if the clipped sum still exceeds R, applies the standard
    simplex-projection threshold so the result sums to R exactly.
    """
    if not R > 0.0:
        raise OracleError(f"projection needs R > 0, got {R}")
    x = np.asarray(x, dtype=float)
    clipped = np.maximum(x, 0.0)
    if clipped.sum() <= R:
        return clipped
    u = np.sort(x)[::-1]
    css = np.cumsum(u) - R
    j = np.arange(1, x.size + 1)
    rho = np.nonzero(u - css / j > 0.0)[0][-1]
    tau = css[rho] / (rho + 1.0)
    return np.maximum(x - tau, 0.0)


@dataclass(frozen=True)
class KKTReport:
    """First-order optimality residuals of a candidate allocation."""

    stationarity_active: float
    stationarity_inactive: float
    complementary_slackness: float
    capacity_violation: float
    negativity_violation: float
    tol: float
    passed: bool


@dataclass
class OracleSolution:
    rates: Dict[Tuple[int, int], float]
    totals: Dict[int, float]
    prices: Dict[int, float]
    objective: float
    kkt: Optional[KKTReport]
    iterations: int
    converged: bool


class _Problem:
    """Scenario unpacked into arrays for the vectorized solver."""

    def __init__(self, scenario):
        self.carriers = sorted(scenario.carriers, key=lambda c: c.id)
        self.ues = sorted(scenario.ues, key=lambda u: u.id)
        self.cids = [c.id for c in self.carriers]
        self.caps = np.array([c.capacity for c in self.carriers], dtype=float)
        self.uids = [u.id for u in self.ues]
        self.utilities: List[UtilityFunction] = [u.utility for u in self.ues]
        self.K = len(self.carriers)
        self.M = len(self.ues)
        self.r_cap = float(self.caps.sum())
        cindex = {cid: k for k, cid in enumerate(self.cids)}
        self.mask = np.zeros((self.K, self.M), dtype=bool)
        for j, ue in enumerate(self.ues):
            for cid in ue.carriers:
                self.mask[cindex[cid], j] = True

        sig = [(j, u) for j, u in enumerate(self.utilities) if isinstance(u, SigmoidalUtility)]
        log = [(j, u) for j, u in enumerate(self.utilities) if isinstance(u, LogarithmicUtility)]
        self.sig_j = np.array([j for j, _ in sig], dtype=int)
        self.sig_a = np.array([u.a for _, u in sig], dtype=float)
        self.sig_b = np.array([u.b for _, u in sig], dtype=float)
        self.log_j = np.array([j for j, _ in log], dtype=int)
        self.log_k = np.array([u.k for _, u in log], dtype=float)
        self.log_norm = np.array(
            [math.log1p(u.k * u.r_max) for _, u in log], dtype=float
        )

    def log_utilities(self, totals: np.ndarray) -> np.ndarray:
        out = np.full(self.M, -np.inf)
        if self.sig_j.size:
            t = totals[self.sig_j]
            a, b = self.sig_a, self.sig_b
            with np.errstate(divide="ignore", invalid="ignore"):
                y = a * t
                le = np.where(
                    y > 33.0,
                    y + np.log1p(-np.exp(-np.minimum(y, 700.0))),
                    np.log(np.expm1(np.minimum(y, 33.0))),
                )
                sp = np.logaddexp(0.0, a * (t - b))
                vals = -a * b + le - sp
            out[self.sig_j] = np.where(t > 0.0, vals, -np.inf)
        if self.log_j.size:
            t = totals[self.log_j]
            with np.errstate(divide="ignore"):
                vals = np.log(np.log1p(self.log_k * t)) - np.log(self.log_norm)
            out[self.log_j] = np.where(t > 0.0, vals, -np.inf)
        return out

    def objective(self, totals: np.ndarray) -> float:
        return float(self.log_utilities(totals).sum())

    def marginals(self, totals: np.ndarray) -> np.ndarray:
        out = np.zeros(self.M)
        if self.sig_j.size:
            t = totals[self.sig_j]
            a, b = self.sig_a, self.sig_b
            with np.errstate(divide="ignore", over="ignore"):
                lead = 1.0 / (-np.expm1(-a * t))
            s = 0.5 * (1.0 + np.tanh(0.5 * a * (t - b)))
            out[self.sig_j] = a * (lead - s)
        if self.log_j.size:
            t = totals[self.log_j]
            kt = self.log_k * t
            with np.errstate(divide="ignore"):
                out[self.log_j] = self.log_k / ((1.0 + kt) * np.log1p(kt))
        return out

    def demand(self, j: int, price: float) -> float:
        return solve_rate_for_price(self.utilities[j], price, self.r_cap)


def _project_rows(prob: _Problem, r: np.ndarray) -> np.ndarray:
    out = np.empty_like(r)
    for k in range(prob.K):
        out[k] = project_carrier_block(r[k], float(prob.caps[k]))
    return out


def _projected_gradient(
    prob: _Problem,
    r0: np.ndarray,
    tol: float,
    max_iters: int,
) -> Tuple[np.ndarray, int, float]:
    """Phase 1: projected gradient ascent with Armijo backtracking."""
    r = r0.copy()
    f = prob.objective(r.sum(axis=0))
    pg_tol = max(tol, 1e-6)
    window_f = f
    pg_norm = np.inf
    it = 0
    while it < max_iters:
        it += 1
        totals = r.sum(axis=0)
        g = prob.marginals(totals)[None, :] * prob.mask
        t = 1.0
        accepted = False
        done = False
        for trial in range(60):
            cand = _project_rows(prob, r + t * g)
            move = cand - r
            if trial == 0:
                # the unit-step projected-gradient map doubles as the
                # first line-search candidate
                pg_norm = float(np.abs(move).max())
                if pg_norm <= pg_tol:
                    done = True
                    break
            f_cand = prob.objective(cand.sum(axis=0))
            if f_cand >= f + ARMIJO_C * float((g * move).sum()):
                r, f = cand, f_cand
                accepted = True
                break
            t *= 0.5
        if done or not accepted:
            break  # converged, or no ascent direction at double precision
        if it % 50 == 0:
            if f - window_f <= 1e-8 * max(1.0, abs(f)):
                break  # progress stalled (flat directions); refinement takes over
            window_f = f
    return r, it, pg_norm


def _recover_duals(prob: _Problem, r: np.ndarray, tol: float) -> np.ndarray:
    """Duals from stationarity: average marginal of users active on a carrier."""
    totals = r.sum(axis=0)
    marg = prob.marginals(np.maximum(totals, 1e-300))
    thresh = math.sqrt(max(tol, 1e-12))
    prices = np.zeros(prob.K)
    for k in range(prob.K):
        active = (r[k] > thresh) & prob.mask[k]
        if active.any():
            prices[k] = float(marg[active].mean())
        else:
            in_range = prob.mask[k]
            prices[k] = float(marg[in_range].max()) if in_range.any() else 0.0
    return prices


def _clear_price(prob: _Problem, ue_idx: Sequence[int], capacity: float) -> float:
    """Bisect the common price at which aggregate demand equals capacity."""
    lo, hi = 1e-14, 1e8

    def total_demand(price: float) -> float:
        return sum(prob.demand(j, price) for j in ue_idx)

    while total_demand(hi) > capacity:
        hi *= 10.0
        if hi > 1e250:
            raise OracleError("could not bracket clearing price from above")
    while total_demand(lo) < capacity:
        lo *= 0.1
        if lo < 1e-250:
            raise OracleError("could not bracket clearing price from below")
    for _ in range(120):
        mid = math.sqrt(lo * hi)
        if total_demand(mid) > capacity:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-15 * hi:
            break
    return math.sqrt(lo * hi)


def _components(
    prob: _Problem,
    prices: np.ndarray,
    forced: Sequence[Tuple[int, int]] = (),
) -> List[List[int]]:
    """Carrier groups linked by some UE whose cheapest carriers span them.

    ``forced`` pairs are unioned unconditionally (carriers discovered to be
    coupled at the optimum even though their trial prices differ).
    """
    parent = list(range(prob.K))

    def find(a: int) -> int:
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    def union(a: int, b: int) -> None:
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[max(ra, rb)] = min(ra, rb)

    for a, b in forced:
        union(a, b)
    for j in range(prob.M):
        reach = np.nonzero(prob.mask[:, j])[0]
        pmin = prices[reach].min()
        tied = [int(k) for k in reach if prices[k] <= pmin * (1.0 + 1e-9) + 1e-15]
        for k in tied[1:]:
            union(tied[0], k)
    groups: Dict[int, List[int]] = {}
    for k in range(prob.K):
        groups.setdefault(find(k), []).append(k)
    return [sorted(g) for g in groups.values()]


def _assignments(prob: _Problem, prices: np.ndarray, comps: List[List[int]]) -> List[List[int]]:
    comp_of = {}
    for ci, comp in enumerate(comps):
        for k in comp:
            comp_of[k] = ci
    assigned: List[List[int]] = [[] for _ in comps]
    for j in range(prob.M):
        reach = np.nonzero(prob.mask[:, j])[0]
        k_best = min((float(prices[k]), int(k)) for k in reach)[1]
        assigned[comp_of[k_best]].append(j)
    return assigned


def _refine_active_set(prob: _Problem, prices0: np.ndarray) -> np.ndarray:
    """Phase 2: iterate (assign users to cheapest carriers, clear prices).

    When a cleared user would strictly prefer a carrier outside its group,
    the optimum couples those carriers (their duals must coincide); such
    pairs are merged permanently, so the loop performs at most K-1 merges
    and cannot oscillate between assignments.
    """
    prices = prices0.copy()
    forced: List[Tuple[int, int]] = []
    for _ in range(100):
        comps = _components(prob, prices, forced)
        assigned = _assignments(prob, prices, comps)
        new_prices = prices.copy()
        for comp, ue_idx in zip(comps, assigned):
            capacity = float(prob.caps[comp].sum())
            if not ue_idx:
                # Nobody wants this group even at price ~0: zero dual.
                new_prices[comp] = 0.0
                continue
            pi = _clear_price(prob, ue_idx, capacity)
            for k in comp:
                new_prices[k] = pi
            if len(comp) > 1 and len(comp) <= 10:
                split = _feasibility_split(prob, comp, ue_idx, pi)
                if split is not None:
                    inside_set, inside_ues, outside_ues = split
                    pi_in = _clear_price(
                        prob, inside_ues, float(prob.caps[inside_set].sum())
                    )
                    rest = [k for k in comp if k not in inside_set]
                    if outside_ues and rest:
                        pi_out = _clear_price(
                            prob, outside_ues, float(prob.caps[rest].sum())
                        )
                    else:
                        pi_out = pi
                    for k in inside_set:
                        new_prices[k] = pi_in
                    for k in rest:
                        new_prices[k] = pi_out
        merged = False
        comp_of: Dict[int, int] = {}
        for ci, comp in enumerate(comps):
            for k in comp:
                comp_of[k] = ci
        for ci, (comp, ue_idx) in enumerate(zip(comps, assigned)):
            pi_own = float(new_prices[comp[0]])
            for j in ue_idx:
                for k in np.nonzero(prob.mask[:, j])[0]:
                    k = int(k)
                    if comp_of[k] != ci and new_prices[k] < pi_own * (1.0 - 1e-12):
                        forced.append((comp[0], k))
                        merged = True
        shift = float(np.abs(new_prices - prices).max())
        scale = float(np.abs(new_prices).max()) or 1.0
        prices = new_prices
        if not merged and shift <= 1e-13 * scale:
            break
    return prices


def _feasibility_split(
    prob: _Problem, comp: List[int], ue_idx: List[int], pi: float
) -> Optional[Tuple[List[int], List[int], List[int]]]:
    """Hall-style check: a carrier subset overloaded by its captive users."""
    members = set(comp)
    demands = {j: prob.demand(j, pi) for j in ue_idx}
    n = len(comp)
    for mask_bits in range(1, (1 << n) - 1):
        subset = [comp[i] for i in range(n) if mask_bits >> i & 1]
        sub_set = set(subset)
        inside = [
            j
            for j in ue_idx
            if set(int(k) for k in np.nonzero(prob.mask[:, j])[0]) & members <= sub_set
        ]
        cap = float(prob.caps[subset].sum())
        load = sum(demands[j] for j in inside)
        if load > cap * (1.0 + 1e-9) + 1e-9:
            outside = [j for j in ue_idx if j not in inside]
            return subset, inside, outside
    return None


def _rates_from_prices(
    prob: _Problem, prices: np.ndarray
) -> Tuple[np.ndarray, np.ndarray]:
    """Totals from demand functions, split across carriers to fill capacity."""
    comps = _components(prob, prices)
    assigned = _assignments(prob, prices, comps)
    totals = np.zeros(prob.M)
    rates = np.zeros((prob.K, prob.M))
    for comp, ue_idx in zip(comps, assigned):
        if not ue_idx:
            continue
        pi = float(prices[comp[0]])
        remaining = {k: float(prob.caps[k]) for k in comp}
        members = set(comp)
        for j in ue_idx:
            totals[j] = prob.demand(j, max(pi, 1e-300))
        # captive users first (single reachable carrier in the group)
        order = sorted(
            ue_idx,
            key=lambda j: (
                len(set(int(k) for k in np.nonzero(prob.mask[:, j])[0]) & members),
                prob.uids[j],
            ),
        )
        for j in order:
            want = totals[j]
            for k in sorted(set(int(t) for t in np.nonzero(prob.mask[:, j])[0]) & members):
                if want <= 0.0:
                    break
                take = min(want, remaining[k])
                rates[k, j] = take
                remaining[k] -= take
                want -= take
            if want > 1e-6 * max(1.0, totals[j]):
                raise OracleError(
                    "active-set split could not place a user's rate within capacity"
                )
    # Absorb the clearing gap (demand staircases make it nonzero at machine
    # precision) into the user whose marginal is flattest: shifting that
    # user's total perturbs stationarity the least, mirroring how the true
    # optimum parks residual capacity on a near-flat marginal.
    totals = rates.sum(axis=0)
    for k in range(prob.K):
        s = rates[k].sum()
        gap = prob.caps[k] - s
        if s <= 0.0 or gap == 0.0 or abs(gap) > 1e-4 * prob.caps[k]:
            continue
        loaded = [j for j in range(prob.M) if rates[k, j] > 0.0]
        j_flat = min(loaded, key=lambda j: _marginal_slope(prob, j, totals[j]))
        rates[k, j_flat] = max(0.0, rates[k, j_flat] + gap)
    totals = rates.sum(axis=0)
    return rates, totals


def _marginal_slope(prob: _Problem, j: int, total: float) -> float:
    """|d marginal / d rate| by central difference; tie-break metric only."""
    h = 1e-4 * max(1.0, total)
    lo = max(total - h, 1e-12)
    hi = total + h
    u = prob.utilities[j]
    return abs(u.marginal(hi) - u.marginal(lo)) / (hi - lo)


def _build_solution(
    prob: _Problem,
    scenario,
    rates: np.ndarray,
    prices: np.ndarray,
    tol: float,
    iterations: int,
) -> OracleSolution:
    totals = rates.sum(axis=0)
    rate_map = {
        (prob.cids[k], prob.uids[j]): float(rates[k, j])
        for k in range(prob.K)
        for j in range(prob.M)
        if prob.mask[k, j]
    }
    price_map = {prob.cids[k]: float(prices[k]) for k in range(prob.K)}
    sol = OracleSolution(
        rates=rate_map,
        totals={prob.uids[j]: float(totals[j]) for j in range(prob.M)},
        prices=price_map,
        objective=prob.objective(totals),
        kkt=None,  # filled below
        iterations=iterations,
        converged=False,
    )
    sol.kkt = kkt_check(sol, scenario, tol)
    sol.converged = sol.kkt.passed
    return sol


def solve_central(
    scenario,
    tol: float = 1e-9,
    max_iters: int = 1_000_000,
    start_rates: Optional[Dict[Tuple[int, int], float]] = None,
) -> OracleSolution:
    """Certified optimum of the log-utility allocation problem.

    ``tol`` is both the target for the projected-gradient phase and the KKT
    tolerance the returned solution is certified against.  ``start_rates``
    overrides the default interior starting point R_l / M_l (used by the
    uniqueness tests; any feasible point works).
    """
    if not (tol > 0.0):
        raise OracleError(f"tol must be > 0, got {tol}")
    prob = _Problem(scenario)

    r0 = np.zeros((prob.K, prob.M))
    if start_rates is None:
        for k in range(prob.K):
            members = prob.mask[k]
            if members.any():
                r0[k, members] = prob.caps[k] / members.sum()
    else:
        cindex = {cid: k for k, cid in enumerate(prob.cids)}
        uindex = {uid: j for j, uid in enumerate(prob.uids)}
        for (cid, uid), v in start_rates.items():
            r0[cindex[cid], uindex[uid]] = v
        r0 = _project_rows(prob, r0)
        zero_total = r0.sum(axis=0) <= 0.0
        if zero_total.any():
            raise OracleError("start_rates must give every UE a positive total")

    def attempt(start: np.ndarray, budget: int) -> Tuple[OracleSolution, np.ndarray, float]:
        r_pg, iters, pg_norm = _projected_gradient(prob, start, tol, budget)
        candidates: List[OracleSolution] = []
        prices_pg = _recover_duals(prob, r_pg, tol)
        try:
            prices_ref = _refine_active_set(prob, prices_pg)
            rates_ref, _ = _rates_from_prices(prob, prices_ref)
            candidates.append(
                _build_solution(prob, scenario, rates_ref, prices_ref, tol, iters)
            )
        except OracleError:
            pass
        candidates.append(_build_solution(prob, scenario, r_pg, prices_pg, tol, iters))
        best = min(
            candidates,
            key=lambda s: max(s.kkt.stationarity_active, s.kkt.stationarity_inactive),
        )
        return best, r_pg, pg_norm

    # The refinement resolves whatever the gradient phase leaves, so a short
    # first phase usually suffices; re-run with the full budget only if the
    # result fails to certify.
    phase1 = min(max_iters, 25_000)
    best, r_pg, pg_norm = attempt(r0, phase1)
    if not best.converged and phase1 < max_iters:
        best2, r_pg, pg_norm = attempt(r_pg, max_iters - phase1)
        best2.iterations += phase1
        if max(best2.kkt.stationarity_active, best2.kkt.stationarity_inactive) <= max(
            best.kkt.stationarity_active, best.kkt.stationarity_inactive
        ):
            best = best2
    if not best.converged and best.iterations >= max_iters:
        raise OracleError(
            f"no certified solution within {max_iters} iterations "
            f"(pg norm {pg_norm:.3e}, stationarity "
            f"{best.kkt.stationarity_active:.3e})"
        )
    return best


def kkt_check(candidate, scenario, tol: float, activity_threshold: Optional[float] = None) -> KKTReport:
    """First-order certificate for any allocation carrying rates and prices.

    ``candidate`` needs ``rates[(carrier_id, ue_id)]`` and
    ``prices[carrier_id]`` mappings (both the protocol and oracle results
    qualify).  Rates at or below ``activity_threshold`` (default: ``tol``)
    are treated as zero for the stationarity split.
    """
    if activity_threshold is None:
        activity_threshold = tol
    utilities = {ue.id: ue.utility for ue in scenario.ues}
    reach = {ue.id: tuple(ue.carriers) for ue in scenario.ues}
    caps = {c.id: c.capacity for c in scenario.carriers}

    totals: Dict[int, float] = {uid: 0.0 for uid in utilities}
    loads: Dict[int, float] = {cid: 0.0 for cid in caps}
    neg = 0.0
    for (cid, uid), r in candidate.rates.items():
        totals[uid] += r
        loads[cid] += r
        neg = max(neg, -r)

    stat_active = 0.0
    stat_inactive = 0.0
    for uid, utility in utilities.items():
        total = totals[uid]
        if total <= 0.0:
            stat_active = float("inf")
            continue
        m = utility.marginal(total)
        for cid in reach[uid]:
            price = candidate.prices[cid]
            r = candidate.rates.get((cid, uid), 0.0)
            if r > activity_threshold:
                stat_active = max(stat_active, abs(m - price))
            else:
                stat_inactive = max(stat_inactive, m - price)
    stat_inactive = max(stat_inactive, 0.0)

    cap_violation = 0.0
    comp_slack = 0.0
    for cid, cap in caps.items():
        slack = cap - loads[cid]
        cap_violation = max(cap_violation, -slack / cap)
        comp_slack = max(comp_slack, abs(candidate.prices[cid] * slack))

    passed = (
        stat_active <= tol
        and stat_inactive <= tol
        and comp_slack <= tol
        and cap_violation <= tol
        and neg <= tol
    )
    return KKTReport(
        stationarity_active=stat_active,
        stationarity_inactive=stat_inactive,
        complementary_slackness=comp_slack,
        capacity_violation=cap_violation,
        negativity_violation=neg,
        tol=tol,
        passed=passed,
    )


def dual_objective(scenario, prices: Dict[int, float]) -> float:
    """D(p) = sum_i max_T (ln U_i(T) - pi_i T) + sum_l p_l R_l.

    pi_i is the cheapest reachable price for user i; the inner maximum is
    attained at the demand T_i(pi_i), making the duality gap of a candidate
    directly computable.
    """
    prob = _Problem(scenario)
    total = 0.0
    for j in range(prob.M):
        reach = np.nonzero(prob.mask[:, j])[0]
        pi = min(prices[prob.cids[int(k)]] for k in reach)
        pi = max(pi, 1e-300)
        t = prob.demand(j, pi)
        total += prob.utilities[j].log_utility(t) - pi * t
    for c in prob.carriers:
        total += prices[c.id] * c.capacity
    return total
