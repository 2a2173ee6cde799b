"""Dual solver for the hindsight allocation problem, plus small-instance oracles.

The relaxed allocation problem (pick fractions of opportunities to maximize
expected conversions under a budget cap and a CPC cap) has a two-variable
dual: minimize ``budget * p + sum_i max(0, v_i - wp_i*p - (wp_i - ctr_i*C)*q)``
over ``p, q >= 0``. The optimum equals the hindsight-optimal value and the
minimizing ``(p, q)`` parameterize the optimal bid formula.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .data import BidLog, CampaignSpec

GOLDEN_RATIO = (1.0 + np.sqrt(5.0)) / 2.0
MAX_GOLDEN_ITERATIONS = 300


class SolverError(RuntimeError):
    """Solver failed to converge; ``best`` carries the best iterate found."""

    def __init__(self, msg: str, best: "DualSolution"):
        super().__init__(msg)
        self.best = best


@dataclass(frozen=True)
class DualSolution:
    """Optimal dual multipliers and certificate data.

    ``p`` prices the budget constraint, ``q`` the CPC constraint;
    ``dual_objective`` equals the hindsight-optimal value by strong duality.
    """

    p: float
    q: float
    dual_objective: float
    iterations: int
    tolerance_achieved: float

    def __post_init__(self):
        if self.p < 0 or self.q < 0:
            raise ValueError(f"dual multipliers must be >= 0, got p={self.p}, q={self.q}")

    def to_dict(self) -> dict:
        return {"p": self.p, "q": self.q, "dual_objective": self.dual_objective,
                "iterations": self.iterations,
                "tolerance_achieved": self.tolerance_achieved}

    @classmethod
    def from_dict(cls, d: Mapping) -> "DualSolution":
        return cls(float(d["p"]), float(d["q"]), float(d["dual_objective"]),
                   int(d["iterations"]), float(d["tolerance_achieved"]))


@dataclass(frozen=True)
class SlacknessReport:
    """Complementary-slackness products per opportunity and their worst violation."""

    assignment: np.ndarray
    bids: np.ndarray
    wp: np.ndarray
    win_slack: np.ndarray
    lose_slack: np.ndarray
    max_violation: float


def _margins(log: BidLog, spec: CampaignSpec, p: float, q: float) -> np.ndarray:
    # v_i - wp_i*p - (wp_i - ctr_i*C)*q : the dual constraint surplus per opportunity
    return log.value - log.wp * p - (log.wp - log.ctr * spec.cpc_cap) * q


def dual_objective(log: BidLog, spec: CampaignSpec, p: float, q: float) -> float:
    """Evaluate the dual objective at (p, q); convex and piecewise linear."""
    if p < 0 or q < 0:
        raise ValueError(f"dual objective is defined for p, q >= 0, got ({p}, {q})")
    hinge = np.maximum(0.0, _margins(log, spec, p, q))
    return float(spec.budget * p + hinge.sum())


def _golden_min(f, lo: float, hi: float, tol_x: float):
    """Golden-section minimum of a unimodal f on [lo, hi].

    Returns (argmin, min, evaluations, converged); ``converged`` is False
    when the iteration cap was hit before the bracket reached ``tol_x``.
    """
    evals = 0
    if hi - lo <= tol_x:
        x = 0.5 * (lo + hi)
        return x, f(x), 1, True
    c = hi - (hi - lo) / GOLDEN_RATIO
    d = lo + (hi - lo) / GOLDEN_RATIO
    fc, fd = f(c), f(d)
    evals += 2
    it = 0
    converged = True
    while hi - lo > tol_x:
        it += 1
        if it > MAX_GOLDEN_ITERATIONS:
            converged = False
            break
        if fc <= fd:
            hi, d, fd = d, c, fc
            c = hi - (hi - lo) / GOLDEN_RATIO
            fc = f(c)
        else:
            lo, c, fc = c, d, fd
            d = lo + (hi - lo) / GOLDEN_RATIO
            fd = f(d)
        evals += 1
    if fc <= fd:
        return c, fc, evals, converged
    return d, fd, evals, converged


def _search_brackets(log: BidLog, spec: CampaignSpec) -> tuple[float, float]:
    # Shadow-price bounds: marginal value per budget unit is at most the best
    # value/cost ratio; per CPC-slack unit at most the best ratio among
    # opportunities that consume slack.
    p_max = float(np.max(log.value / log.wp))
    cpc_coef = log.wp - log.ctr * spec.cpc_cap
    consuming = cpc_coef > 0
    if consuming.any():
        q_max = float(np.max(log.value[consuming] / cpc_coef[consuming]))
    else:
        q_max = 0.0
    return p_max, q_max


def solve_dual(log: BidLog, spec: CampaignSpec, tol: float | None = None) -> DualSolution:
    """Minimize the dual objective by nested golden-section search.

    The objective is jointly convex, so a one-dimensional search over p of
    the inner optimum over q finds the global minimum. ``tol`` bounds the
    objective-value error; the default is 1e-8 relative to the scale of
    the no-bidding objective.
    """
    g00 = dual_objective(log, spec, 0.0, 0.0)
    if tol is None:
        tol = 1e-8 * (1.0 + abs(g00))
    if tol <= 0:
        raise ValueError(f"tol must be > 0, got {tol}")

    budget = spec.budget
    v = log.value
    wp = log.wp
    cpc_coef = wp - log.ctr * spec.cpc_cap
    p_max, q_max = _search_brackets(log, spec)

    # Lipschitz bounds turn the objective tolerance into bracket widths.
    lip_p = budget + float(wp.sum())
    lip_q = float(np.abs(cpc_coef).sum())
    tol_p = tol / (2.0 * lip_p) if lip_p > 0 else p_max
    inner_tol = tol / 10.0
    tol_q = inner_tol / (2.0 * lip_q) if lip_q > 0 else max(q_max, 1.0)

    evals = 0
    all_converged = True

    def g(p: float, q: float) -> float:
        hinge = np.maximum(0.0, v - wp * p - cpc_coef * q)
        return budget * p + float(hinge.sum())

    def inner(p: float) -> tuple[float, float]:
        nonlocal evals, all_converged
        if q_max <= 0.0:
            evals += 1
            return 0.0, g(p, 0.0)
        q, gq, n, ok = _golden_min(lambda q_: g(p, q_), 0.0, q_max, tol_q)
        all_converged &= ok
        evals += n
        # include the boundary: piecewise-linear objectives often minimize at 0
        g0 = g(p, 0.0)
        evals += 1
        if g0 <= gq:
            return 0.0, g0
        return q, gq

    if p_max <= 0.0:
        q_best, obj = inner(0.0)
        return DualSolution(0.0, q_best, obj, evals, tol)

    p_best, obj, _, outer_ok = _golden_min(lambda p_: inner(p_)[1], 0.0, p_max, tol_p)
    all_converged &= outer_ok
    # boundary probe at p = 0 for the same reason as the inner search
    q_at_zero, obj_at_zero = inner(0.0)
    if obj_at_zero <= obj:
        p_best = 0.0
        q_best, obj = q_at_zero, obj_at_zero
    else:
        q_best, obj = inner(p_best)

    width_bound = lip_p * tol_p + lip_q * tol_q
    solution = DualSolution(float(p_best), float(q_best), float(obj),
                            evals, float(width_bound))
    if not all_converged:
        raise SolverError(
            f"dual search did not reach bracket tolerance within "
            f"{MAX_GOLDEN_ITERATIONS} iterations", solution)
    return solution


def hindsight_optimal_value(log: BidLog, spec: CampaignSpec, tol: float | None = None) -> float:
    """Best achievable expected conversions on this log (the dual optimum)."""
    return solve_dual(log, spec, tol).dual_objective


def brute_force_primal(log: BidLog, spec: CampaignSpec) -> tuple[float, np.ndarray]:
    """Exhaustive 0/1 optimum over all subsets; validation oracle for N <= 20.

    Maximizes total value subject to the budget cap and the linearized CPC
    cap (total cost <= cap * total expected clicks). The empty set is
    always feasible with value 0.
    """
    n = len(log)
    if n > 20:
        raise ValueError(f"brute force enumeration supports N <= 20, got {n}")
    bits = (np.arange(1 << n, dtype=np.uint32)[:, None] >> np.arange(n)) & 1
    bits = bits.astype(np.float64)
    cost = bits @ log.wp
    clicks = bits @ log.ctr
    value = bits @ log.value
    feasible = (cost <= spec.budget) & (cost <= spec.cpc_cap * clicks)
    value = np.where(feasible, value, -np.inf)
    best = int(np.argmax(value))
    return float(value[best]), bits[best].astype(np.int8)


def check_slackness(log: BidLog, spec: CampaignSpec, dual: DualSolution,
                    assignment: np.ndarray) -> SlacknessReport:
    """Evaluate both complementary-slackness products per opportunity.

    For an optimal (assignment, dual) pair both products vanish: winners
    must have zero constraint surplus net of r_i, and losers must have
    r_i = 0.
    """
    x = np.asarray(assignment, dtype=np.float64)
    if x.shape != (len(log),):
        raise ValueError(f"assignment length {x.shape} does not match log length {len(log)}")
    margins = _margins(log, spec, dual.p, dual.q)
    r = np.maximum(0.0, margins)
    win_slack = x * (margins - r)
    lose_slack = (x - 1.0) * r
    denom = dual.p + dual.q
    if denom > 0:
        bids = (log.value + dual.q * spec.cpc_cap * log.ctr) / denom
    else:
        bids = np.full(len(log), np.inf)
    max_violation = float(max(np.abs(win_slack).max(), np.abs(lose_slack).max()))
    return SlacknessReport(assignment=x, bids=bids, wp=log.wp.copy(),
                           win_slack=win_slack, lose_slack=lose_slack,
                           max_violation=max_violation)
