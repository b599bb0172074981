"""Utility-proportional-fair rate allocation with joint carrier aggregation.

User agents bid for rate across capacity-limited carriers, carrier agents
answer with shadow prices, and an independent centralized solver certifies
the distributed fixed point against the KKT conditions of the underlying
concave program.
"""

from .utility import (
    LogarithmicUtility,
    RootFindingError,
    SigmoidalUtility,
    UtilityDomainError,
    UtilityFunction,
    evaluate,
    log_utility,
    marginal,
    solve_rate_for_price,
)
from .subproblem import (
    BidVector,
    PriceView,
    ProtocolError,
    UEAgent,
    final_rate,
    ue_step,
)
from .protocol import (
    AllocationResult,
    CarrierAgent,
    EngineConfig,
    NonConvergenceError,
    PriceQuote,
    RoundTrace,
    carrier_step,
    objective,
    run,
)
from .oracle import (
    KKTReport,
    OracleError,
    OracleSolution,
    dual_objective,
    kkt_check,
    project_carrier_block,
    solve_central,
)
from .scenario import (
    CarrierSpec,
    ComparisonReport,
    RunRecord,
    Scenario,
    ScenarioDocument,
    ScenarioError,
    SweepSpec,
    UESpec,
    build_paper_scenario,
    compare_to_oracle,
    load_scenario,
    load_scenario_document,
    run_sweep,
    save_scenario,
    write_results,
    write_trace,
)

__version__ = "0.1.0"

__all__ = [
    "LogarithmicUtility",
    "RootFindingError",
    "SigmoidalUtility",
    "UtilityDomainError",
    "UtilityFunction",
    "evaluate",
    "log_utility",
    "marginal",
    "solve_rate_for_price",
    "BidVector",
    "PriceView",
    "ProtocolError",
    "UEAgent",
    "final_rate",
    "ue_step",
    "AllocationResult",
    "CarrierAgent",
    "EngineConfig",
    "NonConvergenceError",
    "PriceQuote",
    "RoundTrace",
    "carrier_step",
    "objective",
    "run",
    "KKTReport",
    "OracleError",
    "OracleSolution",
    "dual_objective",
    "kkt_check",
    "project_carrier_block",
    "solve_central",
    "CarrierSpec",
    "ComparisonReport",
    "RunRecord",
    "Scenario",
    "ScenarioDocument",
    "ScenarioError",
    "SweepSpec",
    "UESpec",
    "build_paper_scenario",
    "compare_to_oracle",
    "load_scenario",
    "load_scenario_document",
    "run_sweep",
    "save_scenario",
    "write_results",
    "write_trace",
    "__version__",
]
