"""Bid-price functions: the dual-derived optimal strategy and three industry baselines.

The optimal click bid is ``(cvr + q*C) / (p + q)``: a line in cvr that
always passes through (p*C, C) and (-q*C, 0). Raising p lowers every
positive bid (budget lever); raising q rotates bids toward the cap C
(CPC lever). The final per-impression bid is the click bid times ctr.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Opportunity

COST_MIN = "cost-min"
FB_CONTROL = "fb-control"
FB_CONTROL_M = "fb-control-m"
BASELINE_VARIANTS = (COST_MIN, FB_CONTROL, FB_CONTROL_M)


@dataclass(frozen=True)
class OptimalBidParams:
    """Dual multipliers and the CPC cap driving the optimal bid formula."""

    p: float
    q: float
    cpc_cap: float

    def __post_init__(self):
        if self.p < 0 or self.q < 0:
            raise ValueError(f"p and q must be >= 0, got ({self.p}, {self.q})")
        if self.p + self.q <= 0:
            raise ValueError("p + q must be > 0 (the bid formula divides by p + q)")
        if self.cpc_cap <= 0:
            raise ValueError(f"cpc_cap must be > 0, got {self.cpc_cap}")


@dataclass(frozen=True)
class BaselineBidParams:
    """Scale b0 and optional click-bid cap for one baseline variant."""

    b0: float
    variant: str
    cap: float | None = None

    def __post_init__(self):
        if self.variant not in BASELINE_VARIANTS:
            raise ValueError(f"unknown baseline variant {self.variant!r}")
        if self.b0 < 0:
            raise ValueError(f"b0 must be >= 0, got {self.b0}")
        if self.variant == FB_CONTROL:
            if self.cap is not None:
                raise ValueError("fb-control never carries a cap")
        else:
            if self.cap is None or self.cap <= 0:
                raise ValueError(f"{self.variant} requires a positive cap, got {self.cap}")


def optimal_click_bid(cvr: float, params: OptimalBidParams) -> float:
    """Bid price for a click under the optimal strategy."""
    return (cvr + params.q * params.cpc_cap) / (params.p + params.q)


def optimal_bid(opp: Opportunity, params: OptimalBidParams) -> float:
    """Per-impression bid: the click bid scaled by the click probability."""
    return optimal_click_bid(opp.cvr, params) * opp.ctr


def baseline_click_bid(cvr: float, params: BaselineBidParams) -> float:
    """Click bid of a baseline: b0 (flat) or b0*cvr, optionally capped."""
    if params.variant == FB_CONTROL:
        return params.b0
    return min(params.b0 * cvr, params.cap)


def baseline_bid(opp: Opportunity, params: BaselineBidParams) -> float:
    return baseline_click_bid(opp.cvr, params) * opp.ctr


def optimal_bid_array(ctr: np.ndarray, cvr: np.ndarray, p: float, q: float,
                      cpc_cap: float) -> np.ndarray:
    """Vectorized optimal bids; p + q = 0 degenerates to an unbounded bid."""
    if p + q <= 0:
        return np.full(len(ctr), np.inf)
    return (cvr + q * cpc_cap) / (p + q) * ctr


def baseline_bid_array(ctr: np.ndarray, cvr: np.ndarray, b0: float,
                       cap: float | None, variant: str) -> np.ndarray:
    if variant == FB_CONTROL:
        click_bid = np.full(len(ctr), b0)
    else:
        click_bid = np.minimum(b0 * cvr, cap)
    return click_bid * ctr


class OptimalPolicy:
    """Mutable holder of (p, q) for the optimal strategy; controllers update it."""

    def __init__(self, p: float, q: float, cpc_cap: float):
        if p < 0 or q < 0 or cpc_cap <= 0:
            raise ValueError(f"invalid optimal policy parameters ({p}, {q}, {cpc_cap})")
        self.p = p
        self.q = q
        self.cpc_cap = cpc_cap

    def bids(self, ctr: np.ndarray, cvr: np.ndarray) -> np.ndarray:
        return optimal_bid_array(ctr, cvr, self.p, self.q, self.cpc_cap)

    def snapshot(self) -> dict:
        return {"p": self.p, "q": self.q}


class BaselinePolicy:
    """Mutable holder of (b0, cap) for a baseline strategy."""

    def __init__(self, variant: str, b0: float, cap: float | None):
        # reuse the params validation for the variant/cap contract
        BaselineBidParams(b0=b0, variant=variant, cap=cap)
        self.variant = variant
        self.b0 = b0
        self.cap = cap

    def bids(self, ctr: np.ndarray, cvr: np.ndarray) -> np.ndarray:
        return baseline_bid_array(ctr, cvr, self.b0, self.cap, self.variant)

    def snapshot(self) -> dict:
        return {"b0": self.b0, "cap": self.cap}
