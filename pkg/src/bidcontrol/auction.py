"""Second-price auction replay with budget accounting and per-step feedback.

A win requires the bid to strictly exceed the logged winning price and the
price to fit in the remaining budget; the winner pays the winning price.
Controllers, when present, run at step boundaries only, so auctions within
a step are evaluated under frozen parameters (and vectorize exactly).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol

import numpy as np

from .data import BidLog, CampaignSpec, Opportunity

BUDGET_EXHAUSTED = "budget_exhausted"
LOG_END = "log_end"


class BidPolicy(Protocol):
    def bids(self, ctr: np.ndarray, cvr: np.ndarray) -> np.ndarray: ...
    def snapshot(self) -> dict: ...


class ControlLoop(Protocol):
    def update(self, feedback: "StepFeedback") -> None: ...


@dataclass(frozen=True)
class AuctionOutcome:
    """Result of one replayed auction."""

    opportunity_id: int
    won: bool
    price_paid: float
    bid: float

    def __post_init__(self):
        if self.won and self.price_paid <= 0:
            raise ValueError("a won auction must pay the winning price")
        if not self.won and self.price_paid != 0:
            raise ValueError("a lost auction pays nothing")


@dataclass(frozen=True)
class StepFeedback:
    """Per-step aggregates driving the controllers.

    Clicks and conversions are expectations (sums of ctr and ctr*cvr over
    wins); ``step_cpc`` is None when the step had no expected clicks.
    """

    step: int
    cost: float
    expected_clicks: float
    expected_conversions: float
    step_cpc: float | None
    cum_cost: float
    cum_clicks: float
    cum_conversions: float
    cum_cpc: float | None

    def __post_init__(self):
        for name in ("cost", "expected_clicks", "expected_conversions",
                     "cum_cost", "cum_clicks", "cum_conversions"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")


@dataclass
class SimulationTrace:
    """Full record of one simulated campaign-day."""

    steps: list[StepFeedback]
    params: list[dict]
    total_cost: float
    total_clicks: float
    total_value: float
    final_cpc: float | None
    termination: str
    budget: float
    outcomes: list[AuctionOutcome] | None = None

    def __post_init__(self):
        if self.total_cost > self.budget:
            raise ValueError(
                f"overspend: total cost {self.total_cost} exceeds budget {self.budget}")


def run_auction(opp: Opportunity, bid: float, remaining_budget: float) -> AuctionOutcome:
    """Replay one auction: strict-price win gated by affordability. Ties lose."""
    if remaining_budget < 0:
        raise ValueError(f"remaining_budget must be >= 0, got {remaining_budget}")
    if bid < 0:
        raise ValueError(f"bid must be >= 0 (clamp negatives before the auction), got {bid}")
    won = bid > opp.wp and opp.wp <= remaining_budget
    return AuctionOutcome(opportunity_id=opp.id, won=won,
                          price_paid=opp.wp if won else 0.0, bid=bid)


def accumulated_cpc(trace: SimulationTrace, through_step: int | None = None) -> float | None:
    """Cumulative cost over cumulative expected clicks up to a step (or the end).

    None when there are no expected clicks yet: the CPC constraint is then
    vacuous rather than zero or infinite.
    """
    if through_step is None:
        through_step = len(trace.steps) - 1
    if through_step < 0 or not trace.steps:
        return None
    fb = trace.steps[min(through_step, len(trace.steps) - 1)]
    if fb.cum_clicks <= 0:
        return None
    return fb.cum_cost / fb.cum_clicks


def simulate_day(log: BidLog, spec: CampaignSpec, policy: BidPolicy,
                 controller: ControlLoop | None = None,
                 record_outcomes: bool = False) -> SimulationTrace:
    """Replay a full day of auctions under a (possibly controlled) bid policy.

    Opportunities are consumed in timestamp order. At the end of every step
    except the last, the controller (when given) receives that step's
    feedback and may mutate the policy before the next step's first
    auction. The run stops at the first would-be win the remaining budget
    cannot afford, or at log end; either way the trace carries exactly
    ``spec.num_steps`` step records.
    """
    num_steps = spec.num_steps
    boundaries = np.searchsorted(
        log.timestamps, np.arange(1, num_steps + 1) * spec.step_seconds, side="left")
    starts = np.concatenate(([0], boundaries[:-1]))

    steps: list[StepFeedback] = []
    params: list[dict] = []
    outcomes: list[AuctionOutcome] | None = [] if record_outcomes else None

    spent = 0.0
    cum_clicks = 0.0
    cum_value = 0.0
    exhausted = False

    for t in range(num_steps):
        params.append(dict(policy.snapshot()))
        lo, hi = int(starts[t]), int(boundaries[t])
        step_cost = 0.0
        step_clicks = 0.0
        step_value = 0.0

        if not exhausted and hi > lo:
            ctr = log.ctr[lo:hi]
            cvr = log.cvr[lo:hi]
            wp = log.wp[lo:hi]
            bids = np.maximum(policy.bids(ctr, cvr), 0.0)
            price_win = bids > wp
            win_idx = np.flatnonzero(price_win)
            if len(win_idx):
                win_wp = wp[win_idx]
                cum_cost_in_step = np.cumsum(win_wp)
                remaining = spec.budget - spent
                over = cum_cost_in_step > remaining
                if over.any():
                    n_afford = int(np.argmax(over))
                    exhausted = True
                else:
                    n_afford = len(win_idx)
                paid = win_idx[:n_afford]
                step_cost = float(cum_cost_in_step[n_afford - 1]) if n_afford else 0.0
                step_clicks = float(ctr[paid].sum())
                step_value = float((ctr[paid] * cvr[paid]).sum())
                if outcomes is not None:
                    last_auctioned = hi - lo if not exhausted else int(win_idx[n_afford]) + 1
                    won_mask = np.zeros(last_auctioned, dtype=bool)
                    won_mask[paid[paid < last_auctioned]] = True
                    for j in range(last_auctioned):
                        outcomes.append(AuctionOutcome(
                            opportunity_id=int(log.ids[lo + j]), won=bool(won_mask[j]),
                            price_paid=float(wp[j]) if won_mask[j] else 0.0,
                            bid=float(bids[j])))
            elif outcomes is not None:
                for j in range(hi - lo):
                    outcomes.append(AuctionOutcome(
                        opportunity_id=int(log.ids[lo + j]), won=False,
                        price_paid=0.0, bid=float(bids[j])))

        spent += step_cost
        cum_clicks += step_clicks
        cum_value += step_value
        fb = StepFeedback(
            step=t, cost=step_cost, expected_clicks=step_clicks,
            expected_conversions=step_value,
            step_cpc=(step_cost / step_clicks) if step_clicks > 0 else None,
            cum_cost=spent, cum_clicks=cum_clicks, cum_conversions=cum_value,
            cum_cpc=(spent / cum_clicks) if cum_clicks > 0 else None)
        steps.append(fb)

        if controller is not None and not exhausted and t < num_steps - 1:
            controller.update(fb)

    return SimulationTrace(
        steps=steps, params=params, total_cost=spent, total_clicks=cum_clicks,
        total_value=cum_value,
        final_cpc=(spent / cum_clicks) if cum_clicks > 0 else None,
        termination=BUDGET_EXHAUSTED if exhausted else LOG_END,
        budget=spec.budget, outcomes=outcomes)


def trace_records(trace: SimulationTrace, cost_ref: np.ndarray | None = None,
                  telemetry: list[dict] | None = None) -> list[dict]:
    """One JSONL-ready record per step for external plotting and audit."""
    records = []
    for t, fb in enumerate(trace.steps):
        rec = {
            "t": t,
            "cost": fb.cost,
            "cost_ref": float(cost_ref[t]) if cost_ref is not None else None,
            "cum_cost": fb.cum_cost,
            "cpc": fb.step_cpc,
            "cum_cpc": fb.cum_cpc,
            "p": trace.params[t].get("p"),
            "q": trace.params[t].get("q"),
            "b0": trace.params[t].get("b0"),
            "cap": trace.params[t].get("cap"),
        }
        if telemetry is not None and t < len(telemetry):
            rec.update(telemetry[t])
        records.append(rec)
    return records
