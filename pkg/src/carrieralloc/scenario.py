"""Scenario definition, persistence, sweep execution, and result files.

A scenario is a set of capacity-limited carriers plus users, each user with
a utility function and a non-empty set of reachable carriers.  Scenarios are
stored as a single YAML document with top-level sections ``carriers``,
``ues``, and optional ``engine`` and ``sweep`` sections whose field names
mirror the corresponding dataclasses.

The sweep runner re-runs the protocol (and optionally the centralized
oracle) while one carrier's capacity steps through a range, and the writers
emit three CSV files with fixed headers:

    rates.csv    sweep_value,carrier_id,ue_id,rate,bid
    prices.csv   sweep_value,carrier_id,price,rounds,converged
    summary.csv  per-point objective, oracle deltas, KKT residuals

Floats are written with repr (shortest round-trip form), so re-parsing the
files reproduces the in-memory values exactly.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import yaml

from .oracle import KKTReport, OracleError, OracleSolution, kkt_check, solve_central
from .protocol import (
    AllocationResult,
    EngineConfig,
    NonConvergenceError,
    RoundTrace,
    run,
)
from .utility import (
    LogarithmicUtility,
    SigmoidalUtility,
    UtilityDomainError,
    UtilityFunction,
)

__all__ = [
    "ScenarioError",
    "CarrierSpec",
    "UESpec",
    "Scenario",
    "SweepSpec",
    "ScenarioDocument",
    "RunRecord",
    "ComparisonReport",
    "load_scenario",
    "load_scenario_document",
    "save_scenario",
    "scenario_to_yaml",
    "build_paper_scenario",
    "compare_to_oracle",
    "run_sweep",
    "write_results",
    "write_trace",
    "THREADS_ENV_VAR",
]

THREADS_ENV_VAR = "CARRIER_ALLOC_THREADS"

# Tolerances used when a sweep verifies the protocol against the oracle:
# objective agreement, per-UE total agreement (relative), and the KKT
# certificate at ten times the bid-stability tolerance.
VERIFY_OBJECTIVE_TOL = 1e-3
VERIFY_TOTALS_RTOL = 1e-2
VERIFY_KKT_FACTOR = 10.0


class ScenarioError(ValueError):
    """Invalid scenario contents or unparseable scenario file."""


@dataclass(frozen=True)
class CarrierSpec:
    id: int
    capacity: float


@dataclass(frozen=True)
class UESpec:
    id: int
    utility: UtilityFunction
    carriers: Tuple[int, ...]


@dataclass(frozen=True)
class Scenario:
    carriers: Tuple[CarrierSpec, ...]
    ues: Tuple[UESpec, ...]
    name: str = "scenario"

    def __post_init__(self) -> None:
        if not self.carriers:
            raise ScenarioError("scenario needs at least one carrier")
        if not self.ues:
            raise ScenarioError("scenario needs at least one UE")
        cids = [c.id for c in self.carriers]
        if len(set(cids)) != len(cids):
            raise ScenarioError(f"duplicate carrier ids: {sorted(cids)}")
        uids = [u.id for u in self.ues]
        if len(set(uids)) != len(uids):
            raise ScenarioError(f"duplicate UE ids: {sorted(uids)}")
        known = set(cids)
        for c in self.carriers:
            if not (c.capacity > 0.0 and math.isfinite(c.capacity)):
                raise ScenarioError(
                    f"carrier {c.id}: capacity must be > 0, got {c.capacity}"
                )
        for u in self.ues:
            if not u.carriers:
                raise ScenarioError(f"UE {u.id}: reachable carrier set is empty")
            unknown = set(u.carriers) - known
            if unknown:
                raise ScenarioError(
                    f"UE {u.id}: references unknown carriers {sorted(unknown)}"
                )
            if len(set(u.carriers)) != len(u.carriers):
                raise ScenarioError(f"UE {u.id}: duplicate carriers in reach set")

    @property
    def total_capacity(self) -> float:
        return sum(c.capacity for c in self.carriers)

    def carrier(self, carrier_id: int) -> CarrierSpec:
        for c in self.carriers:
            if c.id == carrier_id:
                return c
        raise ScenarioError(f"no carrier with id {carrier_id}")

    def with_capacity(self, carrier_id: int, capacity: float) -> "Scenario":
        self.carrier(carrier_id)  # existence check
        return replace(
            self,
            carriers=tuple(
                replace(c, capacity=capacity) if c.id == carrier_id else c
                for c in self.carriers
            ),
        )


@dataclass(frozen=True)
class SweepSpec:
    """Capacity sweep of one carrier: inclusive endpoints, positive step."""

    carrier_id: int
    start: float
    stop: float
    step: float

    def __post_init__(self) -> None:
        if self.step <= 0.0:
            raise ScenarioError(f"sweep step must be > 0, got {self.step}")
        if self.start > self.stop:
            raise ScenarioError(
                f"sweep range is empty: from {self.start} to {self.stop}"
            )

    def values(self) -> List[float]:
        count = int(math.floor((self.stop - self.start) / self.step + 1e-9)) + 1
        return [self.start + i * self.step for i in range(count)]


@dataclass(frozen=True)
class ScenarioDocument:
    scenario: Scenario
    engine: Optional[EngineConfig] = None
    sweep: Optional[SweepSpec] = None


@dataclass(frozen=True)
class ComparisonReport:
    """Protocol-vs-oracle deltas plus the protocol's KKT certificate."""

    objective_delta: float
    max_total_rel_delta: float
    worst_ue_id: int
    kkt: KKTReport
    passed: bool


@dataclass
class RunRecord:
    sweep_value: float
    result: Optional[AllocationResult] = None
    oracle: Optional[OracleSolution] = None
    comparison: Optional[ComparisonReport] = None
    error: Optional[str] = None


# --------------------------------------------------------------------------
# persistence

_UTILITY_BUILDERS = {
    "sigmoidal": lambda d: SigmoidalUtility(a=float(d["a"]), b=float(d["b"])),
    "logarithmic": lambda d: LogarithmicUtility(
        k=float(d["k"]), r_max=float(d["r_max"])
    ),
}


def _utility_to_dict(u: UtilityFunction) -> Dict[str, object]:
    if isinstance(u, SigmoidalUtility):
        return {"type": "sigmoidal", "a": u.a, "b": u.b}
    if isinstance(u, LogarithmicUtility):
        return {"type": "logarithmic", "k": u.k, "r_max": u.r_max}
    raise ScenarioError(f"unknown utility object {u!r}")


def _utility_from_dict(d: object, where: str) -> UtilityFunction:
    if not isinstance(d, dict) or "type" not in d:
        raise ScenarioError(f"{where}: utility must be a mapping with a 'type' key")
    kind = d["type"]
    builder = _UTILITY_BUILDERS.get(kind)
    if builder is None:
        raise ScenarioError(
            f"{where}: unknown utility type {kind!r} "
            f"(expected one of {sorted(_UTILITY_BUILDERS)})"
        )
    try:
        return builder(d)
    except KeyError as exc:
        raise ScenarioError(f"{where}: utility is missing field {exc}") from exc
    except (TypeError, ValueError, UtilityDomainError) as exc:
        raise ScenarioError(f"{where}: {exc}") from exc


def load_scenario_document(path: Union[str, Path]) -> ScenarioDocument:
    """Parse and validate a scenario file, including any engine/sweep sections."""
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ScenarioError(f"{path}: not valid YAML: {exc}") from exc
    if not isinstance(raw, dict):
        raise ScenarioError(f"{path}: top level must be a mapping")

    def section(name: str, required: bool) -> object:
        if name not in raw:
            if required:
                raise ScenarioError(f"{path}: missing section '{name}'")
            return None
        return raw[name]

    carriers_raw = section("carriers", required=True)
    ues_raw = section("ues", required=True)
    if not isinstance(carriers_raw, list) or not isinstance(ues_raw, list):
        raise ScenarioError(f"{path}: 'carriers' and 'ues' must be lists")

    carriers = []
    for idx, item in enumerate(carriers_raw):
        where = f"{path}: carriers[{idx}]"
        try:
            carriers.append(
                CarrierSpec(id=int(item["id"]), capacity=float(item["capacity"]))
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ScenarioError(f"{where}: {exc}") from exc

    ues = []
    for idx, item in enumerate(ues_raw):
        where = f"{path}: ues[{idx}]"
        try:
            reach = tuple(sorted(int(c) for c in item["carriers"]))
            ues.append(
                UESpec(
                    id=int(item["id"]),
                    utility=_utility_from_dict(item.get("utility"), where),
                    carriers=reach,
                )
            )
        except ScenarioError:
            raise
        except (KeyError, TypeError, ValueError) as exc:
            raise ScenarioError(f"{where}: {exc}") from exc

    name = raw.get("name", path.stem)
    scenario = Scenario(carriers=tuple(carriers), ues=tuple(ues), name=str(name))

    engine = None
    engine_raw = section("engine", required=False)
    if engine_raw is not None:
        try:
            engine = EngineConfig(**{str(k): v for k, v in engine_raw.items()})
        except (TypeError, ValueError) as exc:
            raise ScenarioError(f"{path}: engine: {exc}") from exc

    sweep = None
    sweep_raw = section("sweep", required=False)
    if sweep_raw is not None:
        try:
            sweep = SweepSpec(
                carrier_id=int(sweep_raw["carrier"]),
                start=float(sweep_raw["from"]),
                stop=float(sweep_raw["to"]),
                step=float(sweep_raw["step"]),
            )
        except ScenarioError:
            raise
        except (KeyError, TypeError, ValueError) as exc:
            raise ScenarioError(f"{path}: sweep: {exc}") from exc
        scenario.carrier(sweep.carrier_id)

    return ScenarioDocument(scenario=scenario, engine=engine, sweep=sweep)


def load_scenario(path: Union[str, Path]) -> Scenario:
    """Load just the scenario from a file; invariants enforced at load time."""
    return load_scenario_document(path).scenario


def save_scenario(
    scenario: Scenario,
    path: Union[str, Path],
    engine: Optional[EngineConfig] = None,
    sweep: Optional[SweepSpec] = None,
) -> Path:
    path = Path(path)
    path.write_text(scenario_to_yaml(scenario, engine=engine, sweep=sweep))
    return path


def scenario_to_yaml(
    scenario: Scenario,
    engine: Optional[EngineConfig] = None,
    sweep: Optional[SweepSpec] = None,
) -> str:
    doc: Dict[str, object] = {
        "name": scenario.name,
        "carriers": [
            {"id": c.id, "capacity": float(c.capacity)} for c in scenario.carriers
        ],
        "ues": [
            {
                "id": u.id,
                "utility": _utility_to_dict(u.utility),
                "carriers": list(u.carriers),
            }
            for u in scenario.ues
        ],
    }
    if engine is not None:
        doc["engine"] = {
            "delta": engine.delta,
            "max_rounds": engine.max_rounds,
            "damping": engine.damping,
            "price_floor": engine.price_floor,
            "anchor_gain": engine.anchor_gain,
        }
    if sweep is not None:
        doc["sweep"] = {
            "carrier": sweep.carrier_id,
            "from": sweep.start,
            "to": sweep.stop,
            "step": sweep.step,
        }
    return yaml.safe_dump(doc, sort_keys=False)


def build_paper_scenario(r1: float = 300.0, r2: float = 100.0) -> Scenario:
    """The 18-UE / 2-carrier reference experiment.

    Three user groups of six: group 1 (ids 1-6) reaches carrier 1 only,
    group 2 (ids 7-12) carrier 2 only, group 3 (ids 13-18) both.  Within a
    group the utilities are sigmoidal (5,10), (3,20), (1,30) and logarithmic
    k = 15, 3, 0.5 with r_max = 100.
    """
    profiles: List[UtilityFunction] = [
        SigmoidalUtility(a=5.0, b=10.0),
        SigmoidalUtility(a=3.0, b=20.0),
        SigmoidalUtility(a=1.0, b=30.0),
        LogarithmicUtility(k=15.0, r_max=100.0),
        LogarithmicUtility(k=3.0, r_max=100.0),
        LogarithmicUtility(k=0.5, r_max=100.0),
    ]
    ues = []
    for i in range(1, 19):
        if i <= 6:
            reach: Tuple[int, ...] = (1,)
        elif i <= 12:
            reach = (2,)
        else:
            reach = (1, 2)
        ues.append(UESpec(id=i, utility=profiles[(i - 1) % 6], carriers=reach))
    return Scenario(
        carriers=(CarrierSpec(id=1, capacity=float(r1)), CarrierSpec(id=2, capacity=float(r2))),
        ues=tuple(ues),
        name=f"paper18-r1-{r1:g}",
    )


# --------------------------------------------------------------------------
# sweep execution


def _sweep_workers(n_jobs: int, max_workers: Optional[int]) -> int:
    env = os.environ.get(THREADS_ENV_VAR)
    if env is not None:
        cap = int(env)
        if cap < 1:
            raise ScenarioError(f"{THREADS_ENV_VAR} must be an integer >= 1, got {env}")
    else:
        cap = max_workers if max_workers is not None else (os.cpu_count() or 1)
    return max(1, min(cap, n_jobs))


def compare_to_oracle(
    result: AllocationResult,
    oracle_solution: OracleSolution,
    scenario: Scenario,
    delta: float,
) -> ComparisonReport:
    """Objective and per-UE total deltas, plus the protocol KKT certificate."""
    objective_delta = abs(result.objective - oracle_solution.objective)
    worst_dev, worst_uid = 0.0, min(result.totals)
    for uid, total in result.totals.items():
        ref = oracle_solution.totals[uid]
        dev = abs(total - ref) / max(abs(ref), 1e-300)
        if dev > worst_dev:
            worst_dev, worst_uid = dev, uid
    kkt = kkt_check(result, scenario, tol=VERIFY_KKT_FACTOR * delta)
    passed = (
        objective_delta <= VERIFY_OBJECTIVE_TOL
        and worst_dev <= VERIFY_TOTALS_RTOL
        and kkt.passed
    )
    return ComparisonReport(
        objective_delta=objective_delta,
        max_total_rel_delta=worst_dev,
        worst_ue_id=worst_uid,
        kkt=kkt,
        passed=passed,
    )


def _run_point(
    scenario: Scenario,
    sweep: SweepSpec,
    value: float,
    config: EngineConfig,
    verify: bool,
    oracle_tol: float,
) -> RunRecord:
    record = RunRecord(sweep_value=value)
    point = scenario.with_capacity(sweep.carrier_id, value)
    try:
        record.result = run(point, config)
    except NonConvergenceError as exc:
        record.result = exc.result
        record.error = str(exc)
    except (ScenarioError, OracleError, ValueError, RuntimeError) as exc:
        record.error = f"{type(exc).__name__}: {exc}"
        return record
    if verify:
        try:
            record.oracle = solve_central(point, tol=oracle_tol)
            record.comparison = compare_to_oracle(
                record.result, record.oracle, point, config.delta
            )
        except OracleError as exc:
            record.error = (record.error or "") + f" oracle: {exc}"
    return record


def run_sweep(
    scenario: Scenario,
    sweep: SweepSpec,
    config: EngineConfig = EngineConfig(),
    verify: bool = False,
    oracle_tol: float = 1e-9,
    max_workers: Optional[int] = None,
) -> List[RunRecord]:
    """Protocol run per sweep value; output order follows sweep order.

    Per-point failures (non-convergence, solver errors) are recorded in the
    returned records rather than aborting the sweep.  Points execute in a
    thread pool capped by the CARRIER_ALLOC_THREADS environment variable.
    """
    values = sweep.values()
    scenario.carrier(sweep.carrier_id)
    workers = _sweep_workers(len(values), max_workers)
    if workers == 1:
        return [
            _run_point(scenario, sweep, v, config, verify, oracle_tol) for v in values
        ]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = [
            pool.submit(_run_point, scenario, sweep, v, config, verify, oracle_tol)
            for v in values
        ]
        return [f.result() for f in futures]


# --------------------------------------------------------------------------
# result files

RATES_HEADER = "sweep_value,carrier_id,ue_id,rate,bid"
PRICES_HEADER = "sweep_value,carrier_id,price,rounds,converged"
SUMMARY_HEADER = (
    "sweep_value,objective,rounds,converged,error,"
    "oracle_objective,objective_delta,max_total_rel_delta,"
    "kkt_stationarity_active,kkt_stationarity_inactive,"
    "kkt_complementary_slackness,kkt_passed"
)


def _fmt(x: float) -> str:
    return repr(float(x))


def write_results(records: Sequence[RunRecord], out_dir: Union[str, Path]) -> Dict[str, Path]:
    """Write rates.csv, prices.csv and summary.csv; returns the paths."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc}") from exc

    paths = {
        "rates": out / "rates.csv",
        "prices": out / "prices.csv",
        "summary": out / "summary.csv",
    }

    lines = [RATES_HEADER]
    for rec in records:
        if rec.result is None:
            continue
        for (cid, uid), rate in sorted(rec.result.rates.items()):
            bid = rec.result.bids.get((cid, uid), 0.0)
            lines.append(
                f"{_fmt(rec.sweep_value)},{cid},{uid},{_fmt(rate)},{_fmt(bid)}"
            )
    _write_lines(paths["rates"], lines)

    lines = [PRICES_HEADER]
    for rec in records:
        if rec.result is None:
            continue
        for cid, price in sorted(rec.result.prices.items()):
            lines.append(
                f"{_fmt(rec.sweep_value)},{cid},{_fmt(price)},"
                f"{rec.result.rounds},{rec.result.converged}"
            )
    _write_lines(paths["prices"], lines)

    lines = [SUMMARY_HEADER]
    for rec in records:
        row = [_fmt(rec.sweep_value)]
        if rec.result is not None:
            row += [
                _fmt(rec.result.objective),
                str(rec.result.rounds),
                str(rec.result.converged),
            ]
        else:
            row += ["", "", ""]
        row.append(rec.error or "")
        if rec.oracle is not None and rec.comparison is not None:
            row += [
                _fmt(rec.oracle.objective),
                _fmt(rec.comparison.objective_delta),
                _fmt(rec.comparison.max_total_rel_delta),
                _fmt(rec.comparison.kkt.stationarity_active),
                _fmt(rec.comparison.kkt.stationarity_inactive),
                _fmt(rec.comparison.kkt.complementary_slackness),
                str(rec.comparison.kkt.passed),
            ]
        else:
            row += [""] * 7
        lines.append(",".join(row))
    _write_lines(paths["summary"], lines)

    return paths


def write_trace(trace: Sequence[RoundTrace], path: Union[str, Path]) -> Path:
    """Per-round engine trace: round, prices, bids, max bid delta."""
    path = Path(path)
    lines = ["round,carrier_id,ue_id,price,bid,max_bid_delta"]
    for t in trace:
        for (cid, uid), w in sorted(t.bids.items()):
            lines.append(
                f"{t.round},{cid},{uid},{_fmt(t.prices[cid])},{_fmt(w)},"
                f"{_fmt(t.max_bid_delta)}"
            )
    _write_lines(path, lines)
    return path


def _write_lines(path: Path, lines: Sequence[str]) -> None:
    try:
        path.write_text("\n".join(lines) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc
