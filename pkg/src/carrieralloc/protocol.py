"""Round-based engine coupling user bidding with carrier pricing.

Rounds are synchronous: every carrier turns the bids it currently holds into
a shadow price p_l = sum_i w_li / R_l (floored away from zero) and a stop
flag that is set once no bid moved by delta or more since the previous
round; then every user answers the fresh prices with new bids.  The run
terminates when every carrier raises its stop flag in the same round, or at
the round limit.  Final rates are r_li = w_li / p_l, which by construction
exhausts each carrier's capacity exactly whenever its price is above the
floor.

Agents are stepped in ascending id order and all state is plain floats, so
two runs on identical inputs produce bit-identical results.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

from .subproblem import (
    DEFAULT_ANCHOR_GAIN,
    DEFAULT_DAMPING,
    BidVector,
    PriceView,
    ProtocolError,
    UEAgent,
    final_rate,
    ue_step,
)
from .utility import log_utility

__all__ = [
    "EngineConfig",
    "CarrierAgent",
    "PriceQuote",
    "RoundTrace",
    "AllocationResult",
    "NonConvergenceError",
    "carrier_step",
    "run",
    "objective",
]


@dataclass(frozen=True)
class EngineConfig:
    """Engine parameters; defaults reproduce the reference experiments."""

    delta: float = 1e-3
    max_rounds: int = 10000
    damping: float = DEFAULT_DAMPING
    price_floor: float = 1e-9
    anchor_gain: float = DEFAULT_ANCHOR_GAIN
    keep_trace: bool = False

    def __post_init__(self) -> None:
        if not (self.delta > 0.0):
            raise ValueError(f"delta must be > 0, got {self.delta}")
        if self.max_rounds < 1:
            raise ValueError(f"max_rounds must be >= 1, got {self.max_rounds}")
        if not (0.0 < self.damping <= 1.0):
            raise ValueError(f"damping must be in (0, 1], got {self.damping}")
        if not (self.price_floor > 0.0):
            raise ValueError(f"price_floor must be > 0, got {self.price_floor}")
        if self.anchor_gain < 0.0:
            raise ValueError(f"anchor_gain must be >= 0, got {self.anchor_gain}")


@dataclass(frozen=True)
class PriceQuote:
    carrier_id: int
    price: float
    stop: bool


@dataclass
class CarrierAgent:
    """State of one carrier: capacity, current price, last round's bids."""

    carrier_id: int
    capacity: float
    price: float = 0.0
    prev_bids: Optional[Dict[int, float]] = None
    stop: bool = False
    last_delta: float = float("inf")

    def __post_init__(self) -> None:
        if not (self.capacity > 0.0 and math.isfinite(self.capacity)):
            raise ProtocolError(
                f"carrier {self.carrier_id} capacity must be > 0, got {self.capacity}"
            )


@dataclass(frozen=True)
class RoundTrace:
    round: int
    prices: Dict[int, float]
    bids: Dict[Tuple[int, int], float]
    max_bid_delta: float


@dataclass
class AllocationResult:
    """Converged (or partial) allocation: rates, bids, prices, diagnostics."""

    rates: Dict[Tuple[int, int], float]
    bids: Dict[Tuple[int, int], float]
    prices: Dict[int, float]
    totals: Dict[int, float]
    objective: float
    rounds: int
    converged: bool
    trace: List[RoundTrace] = field(default_factory=list)

    def rate(self, carrier_id: int, ue_id: int) -> float:
        return self.rates.get((carrier_id, ue_id), 0.0)


class NonConvergenceError(RuntimeError):
    """Round limit hit before all carriers went quiet; carries the partial result."""

    def __init__(self, result: AllocationResult):
        super().__init__(
            f"no convergence after {result.rounds} rounds "
            f"(max bid delta still above delta)"
        )
        self.result = result


def carrier_step(
    agent: CarrierAgent,
    bids: Sequence[Tuple[int, float]],
    *,
    delta: float,
    price_floor: float = 1e-9,
) -> PriceQuote:
    """Price update p = max(floor, sum(w)/R) plus the bid-stability stop test.

    Missing UEs count as bidding 0 (and as having bid 0 last round).  A
    carrier that has no previous round yet never stops, whatever the bids.
    """
    current: Dict[int, float] = {}
    for ue_id, w in bids:
        if not (math.isfinite(w) and w >= 0.0):
            raise ProtocolError(
                f"carrier {agent.carrier_id} got bad bid {w} from UE {ue_id}"
            )
        current[ue_id] = w

    total = sum(current.values())
    price = max(price_floor, total / agent.capacity)

    previous = agent.prev_bids if agent.prev_bids is not None else {}
    seen = set(current) | set(previous)
    max_delta = 0.0
    for ue_id in seen:
        change = abs(current.get(ue_id, 0.0) - previous.get(ue_id, 0.0))
        if change > max_delta:
            max_delta = change
    stop = agent.prev_bids is not None and max_delta < delta

    agent.price = price
    agent.prev_bids = current
    agent.stop = stop
    agent.last_delta = max_delta
    return PriceQuote(carrier_id=agent.carrier_id, price=price, stop=stop)


def run(scenario, config: EngineConfig = EngineConfig()) -> AllocationResult:
    """Run the bidding protocol on a scenario until quiescence.

    Raises NonConvergenceError (carrying the partial result) when the round
    limit is reached first.
    """
    carriers = sorted(scenario.carriers, key=lambda c: c.id)
    ues = sorted(scenario.ues, key=lambda u: u.id)
    capacity = {c.id: c.capacity for c in carriers}
    in_range: Dict[int, List[int]] = {c.id: [] for c in carriers}
    for ue in ues:
        for cid in ue.carriers:
            in_range[cid].append(ue.id)

    agents = {
        ue.id: UEAgent(
            ue_id=ue.id,
            utility=ue.utility,
            reachable=tuple(sorted(ue.carriers)),
            # no UE can be allocated more than its reachable carriers hold
            r_cap=sum(capacity[cid] for cid in ue.carriers),
        )
        for ue in ues
    }
    carrier_agents = {
        c.id: CarrierAgent(carrier_id=c.id, capacity=c.capacity) for c in carriers
    }

    # Initial bids w(1) = R_l / M_l: scale-free, strictly positive, and give
    # every carrier a first-round price of exactly 1.
    bids: Dict[Tuple[int, int], float] = {}
    for c in carriers:
        members = in_range[c.id]
        if not members:
            continue
        w0 = c.capacity / len(members)
        for uid in members:
            bids[(c.id, uid)] = w0
    for ue in ues:
        agents[ue.id].last_bids = BidVector(
            entries=tuple((cid, bids[(cid, ue.id)]) for cid in agents[ue.id].reachable)
        )

    trace: List[RoundTrace] = []
    converged = False
    rounds = 0
    for n in range(1, config.max_rounds + 1):
        rounds = n
        quotes = {}
        for c in carriers:
            agent = carrier_agents[c.id]
            carrier_bids = [(uid, bids[(c.id, uid)]) for uid in in_range[c.id]]
            quote = carrier_step(
                agent, carrier_bids, delta=config.delta, price_floor=config.price_floor
            )
            quotes[c.id] = quote
        round_delta = max(carrier_agents[c.id].last_delta for c in carriers)
        if config.keep_trace:
            trace.append(
                RoundTrace(
                    round=n,
                    prices={cid: q.price for cid, q in sorted(quotes.items())},
                    bids=dict(sorted(bids.items())),
                    max_bid_delta=round_delta,
                )
            )
        if all(q.stop for q in quotes.values()):
            converged = True
            break
        if n < config.max_rounds:
            for ue in ues:
                agent = agents[ue.id]
                view = PriceView(
                    entries=tuple(
                        (cid, quotes[cid].price, quotes[cid].stop)
                        for cid in agent.reachable
                    ),
                    round=n,
                )
                new_bids = ue_step(
                    agent,
                    view,
                    damping=config.damping,
                    anchor_gain=config.anchor_gain,
                )
                for cid, w in new_bids.entries:
                    bids[(cid, ue.id)] = w

    prices = {c.id: carrier_agents[c.id].price for c in carriers}
    rates = {
        (cid, uid): final_rate(bids[(cid, uid)], prices[cid], config.price_floor)
        for cid in capacity
        for uid in in_range[cid]
    }
    totals = {
        ue.id: sum(rates.get((cid, ue.id), 0.0) for cid in agents[ue.id].reachable)
        for ue in ues
    }
    obj = sum(log_utility(agents[uid].utility, totals[uid]) for uid in totals)
    result = AllocationResult(
        rates=rates,
        bids=dict(bids),
        prices=prices,
        totals=totals,
        objective=obj,
        rounds=rounds,
        converged=converged,
        trace=trace,
    )
    if not converged:
        raise NonConvergenceError(result)
    return result


def objective(result: AllocationResult, scenario) -> float:
    """Sum of ln U_i over per-UE totals; -inf if any total is zero."""
    utilities = {ue.id: ue.utility for ue in scenario.ues}
    return sum(log_utility(utilities[uid], total) for uid, total in result.totals.items())
