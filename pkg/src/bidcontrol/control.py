"""Multivariable feedback stack: PID channels, exponential actuator, cost
reference builder, predictive signal mixing, and the controllers that drive
the optimal and baseline policies between simulation steps.

Both hyper-parameters act inversely on their outputs (raising p cuts spend,
raising q cuts CPC), so their channels actuate as x0 * exp(-u); baseline
knobs (b0, caps) act directly and use x0 * exp(+u). The CPC channel weighs
each step's error by that step's expected clicks and normalizes the signal
by cumulative clicks, which shifts control pressure onto the accumulated
CPC as the day progresses.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .auction import StepFeedback, simulate_day
from .bidding import (FB_CONTROL, FB_CONTROL_M, BaselinePolicy,
                      OptimalBidParams, OptimalPolicy)
from .data import BidLog, CampaignSpec
from .lp import DualSolution

logger = logging.getLogger(__name__)

INVERSE = "inverse"
DIRECT = "direct"


@dataclass(frozen=True)
class PidGains:
    kp: float
    ki: float
    kd: float

    def __post_init__(self):
        for name in ("kp", "ki", "kd"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")

    def to_list(self) -> list[float]:
        return [self.kp, self.ki, self.kd]


@dataclass
class PidState:
    """One PID channel: gains, accumulators, and the actuation anchor x0.

    The actuator is position-form: each new input value is computed from
    the initial value x0, not the previous one. The integral is clamped
    (anti-windup) and the signal is clamped before exponentiation.
    """

    gains: PidGains
    x0: float
    direction: str = INVERSE
    error_integral: float = 0.0
    previous_error: float = 0.0
    integral_clamp: float = 1e6
    signal_clamp: float = 50.0

    def __post_init__(self):
        if self.x0 <= 0:
            raise ValueError(f"x0 must be > 0, got {self.x0}")
        if self.direction not in (INVERSE, DIRECT):
            raise ValueError(f"direction must be {INVERSE!r} or {DIRECT!r}")


@dataclass(frozen=True)
class ReferenceProfile:
    """Per-step spend targets plus the constant CPC target."""

    cost_ref: np.ndarray
    cpc_ref: float

    def __post_init__(self):
        ref = np.asarray(self.cost_ref, dtype=np.float64)
        object.__setattr__(self, "cost_ref", ref)
        if (ref < 0).any():
            raise ValueError("cost_ref entries must be >= 0")
        if self.cpc_ref <= 0:
            raise ValueError(f"cpc_ref must be > 0, got {self.cpc_ref}")


@dataclass(frozen=True)
class MpcWeights:
    """Mixing weights of the predictive module; (1, 1) is the identity."""

    alpha: float
    beta: float

    def __post_init__(self):
        if not (0.0 <= self.alpha <= 1.0 and 0.0 <= self.beta <= 1.0):
            raise ValueError(f"alpha and beta must be in [0, 1], "
                             f"got ({self.alpha}, {self.beta})")


def pid_step(state: PidState, reference: float, measured: float,
             weight: float | None = None) -> float:
    """Feed one error sample and return the control signal u(t).

    The error is (reference - measured), scaled by ``weight`` when given
    (the CPC channel passes the step's expected clicks).
    """
    e = reference - measured
    if weight is not None:
        e = weight * e
    state.error_integral += e
    state.error_integral = min(max(state.error_integral, -state.integral_clamp),
                               state.integral_clamp)
    g = state.gains
    u = g.kp * e + g.ki * state.error_integral + g.kd * (e - state.previous_error)
    state.previous_error = e
    return u


def normalize_q_signal(u: float, cumulative_clicks: float) -> float:
    """Scale the CPC-channel signal by 1 / cumulative clicks; 0 without clicks."""
    if cumulative_clicks <= 0:
        return 0.0
    return u / cumulative_clicks


def actuate(state: PidState, u: float) -> float:
    """Map a control signal to the next input value: x0 * exp(-u) or exp(+u)."""
    u = min(max(u, -state.signal_clamp), state.signal_clamp)
    if state.direction == INVERSE:
        return state.x0 * math.exp(-u)
    return state.x0 * math.exp(u)


def mpc_mix(u_p: float, u_q: float, w: MpcWeights) -> tuple[float, float]:
    """Blend the two channel signals to compensate their coupling."""
    return (w.alpha * u_p + (1.0 - w.alpha) * u_q,
            (1.0 - w.beta) * u_p + w.beta * u_q)


def build_cost_reference(training_log: BidLog, spec: CampaignSpec,
                         dual: DualSolution) -> ReferenceProfile:
    """Spend-shape reference: the optimal strategy's training-day cost
    distribution per step, scaled to the budget. The CPC reference is the cap.
    """
    policy = OptimalPolicy(dual.p, dual.q, spec.cpc_cap)
    trace = simulate_day(training_log, spec, policy)
    costs = np.array([fb.cost for fb in trace.steps], dtype=np.float64)
    total = costs.sum()
    if total <= 0:
        logger.warning("training day produced zero cost; falling back to a "
                       "uniform cost reference")
        shares = np.full(spec.num_steps, 1.0 / spec.num_steps)
    else:
        shares = costs / total
    return ReferenceProfile(cost_ref=spec.budget * shares, cpc_ref=spec.cpc_cap)


class DualParamController:
    """Two independent PID channels on (p, q), optionally coupled by the
    predictive mixing matrix; weights (1, 1) reproduce the independent
    system exactly.

    The p channel tracks per-step cost against the reference profile; the
    q channel tracks step CPC against the cap with click-weighted error
    and cumulative-click normalization. Both actuate inversely.
    """

    def __init__(self, policy: OptimalPolicy, refs: ReferenceProfile,
                 gains_p: PidGains, gains_q: PidGains,
                 weights: MpcWeights | None = None,
                 signal_clamp: float = 50.0, integral_clamp: float = 1e6):
        if policy.p <= 0 or policy.q <= 0:
            raise ValueError("controlled (p, q) must start strictly positive; "
                             f"got ({policy.p}, {policy.q})")
        self.policy = policy
        self.refs = refs
        self.weights = weights if weights is not None else MpcWeights(1.0, 1.0)
        self.state_p = PidState(gains_p, x0=policy.p, direction=INVERSE,
                                signal_clamp=signal_clamp, integral_clamp=integral_clamp)
        self.state_q = PidState(gains_q, x0=policy.q, direction=INVERSE,
                                signal_clamp=signal_clamp, integral_clamp=integral_clamp)
        self.telemetry: list[dict] = []

    def update(self, fb: StepFeedback) -> OptimalBidParams:
        u_p = pid_step(self.state_p, float(self.refs.cost_ref[fb.step]), fb.cost)
        if fb.step_cpc is not None:
            raw = pid_step(self.state_q, self.refs.cpc_ref, fb.step_cpc,
                           weight=fb.expected_clicks)
        else:
            # no clicks this step: a zero-weight sample keeps the PID history aligned
            raw = pid_step(self.state_q, self.refs.cpc_ref, self.refs.cpc_ref,
                           weight=0.0)
        u_q = normalize_q_signal(raw, fb.cum_clicks)
        u_p_mixed, u_q_mixed = mpc_mix(u_p, u_q, self.weights)
        self.policy.p = actuate(self.state_p, u_p_mixed)
        self.policy.q = actuate(self.state_q, u_q_mixed)
        self.telemetry.append({"u_p": u_p, "u_q": u_q,
                               "u_p_mixed": u_p_mixed, "u_q_mixed": u_q_mixed})
        return OptimalBidParams(self.policy.p, self.policy.q, self.policy.cpc_cap)


class BaselineController:
    """PID channel(s) driving a baseline policy's knobs, direct actuation.

    cost-min paces b0 against the cost reference (its cap stays frozen);
    fb-control steers b0 by step CPC; fb-control-m paces b0 and steers its
    cap by step CPC.
    """

    def __init__(self, policy: BaselinePolicy, refs: ReferenceProfile,
                 gains_b0: PidGains, gains_cap: PidGains | None = None):
        self.policy = policy
        self.refs = refs
        if policy.b0 <= 0:
            raise ValueError("controlled b0 must start strictly positive")
        self.state_b0 = PidState(gains_b0, x0=policy.b0, direction=DIRECT)
        self.state_cap = None
        if policy.variant == FB_CONTROL_M:
            if gains_cap is None:
                raise ValueError("fb-control-m needs gains for its cap channel")
            self.state_cap = PidState(gains_cap, x0=policy.cap, direction=DIRECT)
        self.telemetry: list[dict] = []

    def _cpc_signal(self, state: PidState, fb: StepFeedback) -> float:
        if fb.step_cpc is not None:
            return pid_step(state, self.refs.cpc_ref, fb.step_cpc)
        return pid_step(state, self.refs.cpc_ref, self.refs.cpc_ref)

    def update(self, fb: StepFeedback) -> None:
        tele: dict = {}
        if self.policy.variant == FB_CONTROL:
            u = self._cpc_signal(self.state_b0, fb)
            self.policy.b0 = actuate(self.state_b0, u)
            tele["u_b0"] = u
        else:
            u = pid_step(self.state_b0, float(self.refs.cost_ref[fb.step]), fb.cost)
            self.policy.b0 = actuate(self.state_b0, u)
            tele["u_b0"] = u
            if self.state_cap is not None:
                u_cap = self._cpc_signal(self.state_cap, fb)
                self.policy.cap = actuate(self.state_cap, u_cap)
                tele["u_cap"] = u_cap
        self.telemetry.append(tele)


def control_loop_step(controller: DualParamController,
                      feedback: StepFeedback) -> OptimalBidParams:
    """Advance the (p, q) control loop by one step and return the new params."""
    return controller.update(feedback)
