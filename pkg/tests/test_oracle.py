"""Centralized solver: projection, optima, KKT certification, duality."""

import numpy as np
import pytest

from helpers import fd_marginal_tolerance
from carrieralloc.oracle import (
    OracleError,
    dual_objective,
    kkt_check,
    project_carrier_block,
    solve_central,
)
from carrieralloc.protocol import EngineConfig, run
from carrieralloc.scenario import CarrierSpec, Scenario, UESpec, build_paper_scenario
from carrieralloc.utility import (
    LogarithmicUtility,
    SigmoidalUtility,
    log_utility,
    marginal,
)


def two_ue_scenario():
    return Scenario(
        carriers=(CarrierSpec(id=1, capacity=100.0),),
        ues=(
            UESpec(id=1, utility=SigmoidalUtility(a=5.0, b=10.0), carriers=(1,)),
            UESpec(id=2, utility=LogarithmicUtility(k=0.5, r_max=100.0), carriers=(1,)),
        ),
        name="sig-vs-log",
    )


# ---------------------------------------------------------------------------
# projection


def test_projection_clips_negatives():
    out = project_carrier_block(np.array([-1.0, 2.0]), 10.0)
    assert np.allclose(out, [0.0, 2.0])


def test_projection_applies_simplex_threshold():
    out = project_carrier_block(np.array([6.0, 6.0]), 10.0)
    assert np.allclose(out, [5.0, 5.0])
    assert out.sum() == pytest.approx(10.0, abs=1e-12)


def test_projection_zero_is_fixed_point():
    out = project_carrier_block(np.zeros(2), 10.0)
    assert np.allclose(out, 0.0)


def test_projection_variational_inequality():
    # P(x) is the projection iff (x - P(x)) . (z - P(x)) <= 0 for all feasible z
    rng = np.random.default_rng(23)
    for _ in range(300):
        n = rng.integers(1, 8)
        R = rng.uniform(0.5, 20.0)
        x = rng.normal(0.0, 10.0, size=n)
        px = project_carrier_block(x, R)
        assert (px >= -1e-12).all()
        assert px.sum() <= R * (1.0 + 1e-12)
        for _ in range(5):
            z = rng.uniform(0.0, 1.0, size=n)
            z = z / max(z.sum(), 1e-12) * rng.uniform(0.0, R)
            assert float((x - px) @ (z - px)) <= 1e-9 * (1.0 + np.abs(x).max())


# ---------------------------------------------------------------------------
# solve_central


def test_identical_ues_split_evenly():
    u = LogarithmicUtility(k=3.0, r_max=100.0)
    s = Scenario(
        carriers=(CarrierSpec(id=1, capacity=100.0),),
        ues=(UESpec(id=1, utility=u, carriers=(1,)), UESpec(id=2, utility=u, carriers=(1,))),
        name="twins",
    )
    sol = solve_central(s, tol=1e-9)
    assert sol.totals[1] == pytest.approx(50.0, abs=1e-6)
    assert sol.totals[2] == pytest.approx(50.0, abs=1e-6)
    assert sol.objective == pytest.approx(2.0 * log_utility(u, 50.0), abs=1e-9)


def test_sig_log_pair_equalizes_marginals():
    s = two_ue_scenario()
    sol = solve_central(s, tol=1e-9)
    # independent scalar bisection on marginal_sig(r) = marginal_log(100 - r)
    sig, log = s.ues[0].utility, s.ues[1].utility
    lo, hi = 1e-9, 100.0 - 1e-9
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if marginal(sig, mid) > marginal(log, 100.0 - mid):
            lo = mid
        else:
            hi = mid
    r_sig = 0.5 * (lo + hi)
    assert sol.totals[1] == pytest.approx(r_sig, abs=1e-6)
    assert sol.totals[2] == pytest.approx(100.0 - r_sig, abs=1e-6)


def test_paper_scenario_totals_at_r1_300():
    sol = solve_central(build_paper_scenario(300.0), tol=1e-9)
    expected = [11.27, 21.94, 34.72, 19.82, 25.67, 36.36]
    for j, want in enumerate(expected):
        assert sol.totals[13 + j] == pytest.approx(want, abs=1.0)
    assert sol.kkt.passed


def test_oracle_capacity_exhausted_exactly():
    sol = solve_central(build_paper_scenario(110.0), tol=1e-9)
    loads = {1: 0.0, 2: 0.0}
    for (cid, _), r in sol.rates.items():
        assert r >= 0.0
        loads[cid] += r
    assert abs(loads[1] - 110.0) <= 1e-9 * 110.0
    assert abs(loads[2] - 100.0) <= 1e-9 * 100.0


def test_totals_unique_across_starting_points():
    s = build_paper_scenario(150.0)
    tol = 1e-9
    base = solve_central(s, tol=tol)
    rng = np.random.default_rng(31)
    for _ in range(2):
        start = {}
        for c in s.carriers:
            members = [u.id for u in s.ues if c.id in u.carriers]
            weights = rng.uniform(0.05, 1.0, size=len(members))
            weights = weights / weights.sum() * c.capacity * rng.uniform(0.3, 1.0)
            for uid, w in zip(members, weights):
                start[(c.id, uid)] = float(w)
        other = solve_central(s, tol=tol, start_rates=start)
        for uid, total in base.totals.items():
            assert other.totals[uid] == pytest.approx(total, abs=10.0 * tol + 1e-7)


def test_oracle_objective_dominates_random_feasible_points():
    s = build_paper_scenario(90.0)
    sol = solve_central(s, tol=1e-9)
    rng = np.random.default_rng(37)
    utilities = {u.id: u.utility for u in s.ues}
    for _ in range(100):
        totals = {uid: 0.0 for uid in utilities}
        for c in s.carriers:
            members = [u.id for u in s.ues if c.id in u.carriers]
            weights = rng.uniform(0.0, 1.0, size=len(members))
            weights = weights / weights.sum() * c.capacity
            for uid, w in zip(members, weights):
                totals[uid] += float(w)
        candidate = sum(log_utility(utilities[uid], t) for uid, t in totals.items())
        assert candidate <= sol.objective + 1e-9


def test_gradient_matches_finite_differences():
    s = build_paper_scenario(150.0)
    utilities = {u.id: u.utility for u in s.ues}
    rng = np.random.default_rng(41)
    for _ in range(50):
        uid = int(rng.integers(1, 19))
        total = float(rng.uniform(0.5, 60.0))
        h = 1e-6 * max(1.0, total)
        fd = (
            log_utility(utilities[uid], total + h)
            - log_utility(utilities[uid], total - h)
        ) / (2.0 * h)
        noise = fd_marginal_tolerance(utilities[uid], total, h)
        assert abs(marginal(utilities[uid], total) - fd) <= 1e-5 * abs(fd) + noise


def test_duality_gap_is_small():
    s = build_paper_scenario(150.0)
    sol = solve_central(s, tol=1e-9)
    gap = dual_objective(s, sol.prices) - sol.objective
    assert -1e-9 <= gap <= 1e-5


def test_oracle_rejects_bad_tol():
    with pytest.raises(OracleError):
        solve_central(two_ue_scenario(), tol=0.0)


# ---------------------------------------------------------------------------
# kkt_check


def test_exact_solution_passes_kkt_at_solver_tol():
    s = build_paper_scenario(200.0)
    sol = solve_central(s, tol=1e-9)
    report = kkt_check(sol, s, tol=1e-9)
    assert report.passed


def test_perturbation_grows_stationarity_residual():
    s = two_ue_scenario()
    sol = solve_central(s, tol=1e-9)
    base = kkt_check(sol, s, tol=1e-9)
    bumped = dict(sol.rates)
    key = (1, 1)
    bumped[key] = bumped[key] * 1.01

    class Candidate:
        rates = bumped
        prices = sol.prices

    worse = kkt_check(Candidate(), s, tol=1e-9)
    assert worse.stationarity_active > base.stationarity_active
    assert not worse.passed


def test_converged_protocol_passes_kkt_at_10_delta():
    s = build_paper_scenario(130.0)
    res = run(s, EngineConfig())
    report = kkt_check(res, s, tol=10.0 * 1e-3)
    assert report.passed
