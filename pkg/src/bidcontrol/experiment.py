"""Campaign orchestration: batch construction, dual-solve preparation,
grid-search tuning, and batch evaluation metrics.

Tuning never touches test data. Each candidate gain setting is scored by
replaying the training day under systematic winning-price stress (prices
scaled up and down), which rewards settings that actually steer the system
back to its references instead of settings that do nothing. Scores are
lexicographic: CPC-constraint satisfaction first, value second.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import Mapping, Sequence

import numpy as np

from .auction import SimulationTrace, simulate_day
from .bidding import (COST_MIN, FB_CONTROL, FB_CONTROL_M, BaselinePolicy,
                      OptimalPolicy)
from .control import (BaselineController, DualParamController, MpcWeights,
                      PidGains, ReferenceProfile, build_cost_reference)
from .data import (BidLog, CampaignSpec, LogSummary, SyntheticConfig,
                   generate_log, summarize_log)
from .lp import DualSolution, solve_dual

logger = logging.getLogger(__name__)

OPTIMAL_STATIC = "optimal-static"
I_PID = "i-pid"
M_PID = "m-pid"
STRATEGIES = (OPTIMAL_STATIC, I_PID, M_PID, COST_MIN, FB_CONTROL, FB_CONTROL_M)
TUNABLE_STRATEGIES = (I_PID, M_PID, COST_MIN, FB_CONTROL, FB_CONTROL_M)

CPC_OVERSHOOT_MARGIN = 0.1
# Tuning accepts less CPC slack than evaluation allows, so the selected
# gains keep a safety margin for conditions outside the stress envelope.
TUNING_CPC_MARGIN = 0.08

DEFAULT_KP_VALUES = (0.0, 0.01, 0.03, 0.1, 0.3, 1.0, 3.0)
DEFAULT_KI_VALUES = (0.0, 0.01, 0.03, 0.1, 0.3, 1.0, 3.0)
DEFAULT_KD_VALUES = (0.0, 0.1, 1.0)
DEFAULT_WEIGHT_VALUES = (0.0, 0.25, 0.5, 0.75, 1.0)
DEFAULT_STRESS_FACTORS = (1.25, 0.85)


def default_gain_grid() -> list[PidGains]:
    return [PidGains(kp, ki, kd)
            for kp in DEFAULT_KP_VALUES
            for ki in DEFAULT_KI_VALUES
            for kd in DEFAULT_KD_VALUES]


def default_weight_grid() -> list[MpcWeights]:
    """(alpha, beta) candidates; the identity (1, 1) leads so that ties
    keep the mixed system equal to the independent one."""
    grid = [MpcWeights(1.0, 1.0)]
    for alpha in DEFAULT_WEIGHT_VALUES:
        for beta in DEFAULT_WEIGHT_VALUES:
            if (alpha, beta) != (1.0, 1.0):
                grid.append(MpcWeights(alpha, beta))
    return grid


@dataclass(frozen=True)
class Campaign:
    """A campaign: budget/CPC constraints, plus the generation config when
    its logs are synthetic (file-backed campaigns carry None)."""

    synth: SyntheticConfig | None
    spec: CampaignSpec

    @property
    def campaign_id(self) -> str:
        return self.spec.campaign_id


@dataclass
class CampaignContext:
    """Everything run_campaign needs, solved once per campaign."""

    campaign_id: str
    train: BidLog
    test: BidLog
    spec: CampaignSpec
    train_dual: DualSolution
    refs: ReferenceProfile
    train_summary: LogSummary
    test_hindsight: float

    @property
    def train_hindsight(self) -> float:
        return self.train_dual.dual_objective


@dataclass(frozen=True)
class CampaignResult:
    """Outcome of one (campaign, strategy) evaluation."""

    campaign_id: str
    strategy: str
    value: float
    hindsight_value: float
    value_fraction: float
    cpc: float | None
    cpc_cap: float
    cpc_satisfied: bool
    total_cost: float
    termination: str

    def __post_init__(self):
        if self.value < 0.0:
            raise ValueError(f"realized value must be >= 0, got {self.value}")
        # The hindsight optimum only dominates allocations that honor the CPC
        # cap itself; a run inside the overshoot margin (or past it) may
        # legitimately exceed R*.
        if ((self.cpc is None or self.cpc <= self.cpc_cap)
                and self.value > self.hindsight_value + 1e-9):
            raise ValueError(
                f"cap-feasible value {self.value} exceeds hindsight "
                f"{self.hindsight_value} + 1e-9 for {self.strategy} "
                f"on {self.campaign_id}")

    def to_dict(self) -> dict:
        return {"campaign_id": self.campaign_id, "strategy": self.strategy,
                "value": self.value, "hindsight_value": self.hindsight_value,
                "value_fraction": self.value_fraction, "cpc": self.cpc,
                "cpc_cap": self.cpc_cap, "cpc_satisfied": self.cpc_satisfied,
                "total_cost": self.total_cost, "termination": self.termination}


@dataclass
class BatchReport:
    """Per-strategy CPC and value ratios over a campaign batch."""

    results: list[CampaignResult]
    strategies: list[str]

    def cpc_ratio(self, strategy: str) -> float:
        rows = [r for r in self.results if r.strategy == strategy]
        if not rows:
            return 0.0
        return sum(r.cpc_satisfied for r in rows) / len(rows)

    def value_ratio(self, strategy: str) -> float | None:
        rows = [r for r in self.results
                if r.strategy == strategy and r.cpc_satisfied]
        if not rows:
            return None
        return sum(r.value_fraction for r in rows) / len(rows)

    def summary_rows(self) -> list[dict]:
        return [{"strategy": s, "cpc_ratio": self.cpc_ratio(s),
                 "value_ratio": self.value_ratio(s)} for s in self.strategies]


def cpc_satisfied(cpc: float | None, cpc_cap: float,
                  margin: float = CPC_OVERSHOOT_MARGIN) -> bool:
    """Campaign-level constraint check: within the overshoot margin, or no
    clicks at all (vacuously satisfied)."""
    return cpc is None or cpc <= (1.0 + margin) * cpc_cap


def value_fraction(value: float, hindsight: float) -> float:
    if hindsight <= 1e-12:
        return 1.0
    return value / hindsight


def initial_control_params(dual: DualSolution, train: BidLog) -> tuple[float, float]:
    """Controller starting point: the train-optimal (p, q), floored to keep
    the position-form actuator x0 * exp(-u) able to move off zero."""
    p0 = dual.p
    if p0 <= 0:
        p0 = 1e-3 * float(np.mean(train.value / train.wp))
    q0 = dual.q
    if q0 <= 0:
        q0 = 1e-3 * p0
    return p0, q0


def prepare_campaign(campaign: Campaign, tol: float | None = None,
                     train: BidLog | None = None, test: BidLog | None = None,
                     train_dual: DualSolution | None = None,
                     test_hindsight: float | None = None) -> CampaignContext:
    """Generate (or accept) the logs and solve everything reusable."""
    if train is None:
        train = generate_log(campaign.synth, "train")
    if test is None:
        test = generate_log(campaign.synth, "test")
    spec = campaign.spec
    if train_dual is None:
        train_dual = solve_dual(train, spec, tol)
    if test_hindsight is None:
        test_hindsight = solve_dual(test, spec, tol).dual_objective
    refs = build_cost_reference(train, spec, train_dual)
    summary = summarize_log(train, spec.step_seconds, spec.num_steps)
    return CampaignContext(
        campaign_id=spec.campaign_id, train=train, test=test, spec=spec,
        train_dual=train_dual, refs=refs, train_summary=summary,
        test_hindsight=float(test_hindsight))


def _gains(entry: Mapping, key: str) -> PidGains:
    kp, ki, kd = entry[key]
    return PidGains(float(kp), float(ki), float(kd))


def build_strategy(ctx: CampaignContext, strategy: str,
                   tuned_entry: Mapping | None = None):
    """Instantiate (policy, controller) for one strategy on one campaign.

    Controller strategies require a tuned entry carrying their gains (and,
    for the mixed system, alpha/beta).
    """
    spec = ctx.spec
    if strategy == OPTIMAL_STATIC:
        return OptimalPolicy(ctx.train_dual.p, ctx.train_dual.q, spec.cpc_cap), None

    if tuned_entry is None:
        raise KeyError(f"strategy {strategy!r} requires a tuned config entry")

    if strategy in (I_PID, M_PID):
        p0, q0 = initial_control_params(ctx.train_dual, ctx.train)
        policy = OptimalPolicy(p0, q0, spec.cpc_cap)
        weights = MpcWeights(float(tuned_entry.get("alpha", 1.0)),
                             float(tuned_entry.get("beta", 1.0)))
        controller = DualParamController(
            policy, ctx.refs, _gains(tuned_entry, "gains_p"),
            _gains(tuned_entry, "gains_q"), weights=weights,
            signal_clamp=float(tuned_entry.get("signal_clamp", 50.0)),
            integral_clamp=float(tuned_entry.get("integral_clamp", 1e6)))
        return policy, controller

    mean_cvr = ctx.train_summary.mean_cvr
    if strategy == COST_MIN:
        policy = BaselinePolicy(COST_MIN, b0=spec.cpc_cap / mean_cvr, cap=spec.cpc_cap)
        controller = BaselineController(policy, ctx.refs, _gains(tuned_entry, "gains_b0"))
        return policy, controller
    if strategy == FB_CONTROL:
        policy = BaselinePolicy(FB_CONTROL, b0=spec.cpc_cap, cap=None)
        controller = BaselineController(policy, ctx.refs, _gains(tuned_entry, "gains_b0"))
        return policy, controller
    if strategy == FB_CONTROL_M:
        policy = BaselinePolicy(FB_CONTROL_M, b0=spec.cpc_cap / mean_cvr, cap=spec.cpc_cap)
        controller = BaselineController(policy, ctx.refs,
                                        _gains(tuned_entry, "gains_b0"),
                                        gains_cap=_gains(tuned_entry, "gains_cap"))
        return policy, controller
    raise KeyError(f"unknown strategy {strategy!r}")


def simulate_strategy(ctx: CampaignContext, strategy: str,
                      tuned_entry: Mapping | None = None,
                      log: BidLog | None = None,
                      record_outcomes: bool = False):
    """Simulate one strategy on one day (the campaign's test day by default).

    Returns (trace, controller); the controller holds per-step signal
    telemetry when the strategy is controlled.
    """
    if log is None:
        log = ctx.test
    policy, controller = build_strategy(ctx, strategy, tuned_entry)
    trace = simulate_day(log, ctx.spec, policy, controller,
                         record_outcomes=record_outcomes)
    return trace, controller


PER_CAMPAIGN_KEY = "per_campaign"


def resolve_tuned_entry(tuned: Mapping | None, strategy: str,
                        campaign_id: str) -> Mapping | None:
    """Look up a strategy's tuned entry in either tuned-config shape:
    pooled ({strategy: entry}) or per-campaign ({"per_campaign":
    {campaign_id: {strategy: entry}}})."""
    if not tuned:
        return None
    if PER_CAMPAIGN_KEY in tuned:
        return tuned[PER_CAMPAIGN_KEY].get(campaign_id, {}).get(strategy)
    return tuned.get(strategy)


def run_campaign(ctx: CampaignContext, strategy: str,
                 tuned: Mapping | None = None) -> CampaignResult:
    """Full protocol for one campaign: train-solved parameters applied to
    the test day, scored against the test day's hindsight optimum."""
    entry = None
    if strategy != OPTIMAL_STATIC:
        entry = resolve_tuned_entry(tuned, strategy, ctx.campaign_id)
    trace, _ = simulate_strategy(ctx, strategy, entry)
    return result_from_trace(ctx, strategy, trace, ctx.test_hindsight)


def result_from_trace(ctx: CampaignContext, strategy: str,
                      trace: SimulationTrace, hindsight: float) -> CampaignResult:
    return CampaignResult(
        campaign_id=ctx.campaign_id, strategy=strategy,
        value=trace.total_value, hindsight_value=hindsight,
        value_fraction=value_fraction(trace.total_value, hindsight),
        cpc=trace.final_cpc, cpc_cap=ctx.spec.cpc_cap,
        cpc_satisfied=cpc_satisfied(trace.final_cpc, ctx.spec.cpc_cap),
        total_cost=trace.total_cost, termination=trace.termination)


def evaluate_batch(contexts: Sequence[CampaignContext], strategies: Sequence[str],
                   tuned: Mapping | None = None) -> BatchReport:
    """Evaluate every strategy on every campaign's test day."""
    results = [run_campaign(ctx, strategy, tuned)
               for strategy in strategies for ctx in contexts]
    return BatchReport(results=results, strategies=list(strategies))


def _stressed_log(log: BidLog, factor: float) -> BidLog:
    return BidLog.from_arrays(log.ids, log.timestamps, log.wp * factor,
                              log.ctr, log.cvr, day_label=f"{log.day_label}-x{factor}")


def _score(contexts: Sequence[CampaignContext],
           stressed: Mapping[tuple[str, float], BidLog],
           factors: Sequence[float], strategy: str,
           entry: Mapping) -> tuple[float, float]:
    """Lexicographic tuning score pooled over campaigns and stress scenarios:
    (fraction satisfying the CPC margin, mean train-normalized value on the
    satisfying runs)."""
    satisfied = 0
    total = 0
    fractions = []
    for ctx in contexts:
        for factor in factors:
            log = stressed[(ctx.campaign_id, factor)]
            trace, _ = simulate_strategy(ctx, strategy, entry, log=log)
            ok = cpc_satisfied(trace.final_cpc, ctx.spec.cpc_cap,
                               margin=TUNING_CPC_MARGIN)
            total += 1
            satisfied += ok
            if ok:
                fractions.append(value_fraction(trace.total_value, ctx.train_hindsight))
    ratio = satisfied / total if total else 0.0
    value = sum(fractions) / len(fractions) if fractions else float("-inf")
    return ratio, value


def _argmax(candidates, score_fn):
    """First-in-grid argmax under lexicographic (cpc_ratio, value) scores."""
    best = None
    best_score = None
    for cand in candidates:
        s = score_fn(cand)
        if best_score is None or s > best_score:
            best, best_score = cand, s
    return best, best_score


def grid_search(contexts: Sequence[CampaignContext],
                strategies: Sequence[str] | None = None,
                gain_grid: Sequence[PidGains] | None = None,
                weight_grid: Sequence[MpcWeights] | None = None,
                stress_factors: Sequence[float] = DEFAULT_STRESS_FACTORS) -> dict:
    """Tune every requested strategy on the training days, one shared config
    per strategy across the batch.

    Channels are searched in sequence (the CPC-side channel first, since
    constraint satisfaction leads the score) rather than as a full cross
    product; the mixed system then searches alpha/beta around the
    independent system's tuned gains, so its searched set contains the
    independent optimum.
    """
    if strategies is None:
        strategies = list(TUNABLE_STRATEGIES)
    if gain_grid is None:
        gain_grid = default_gain_grid()
    if weight_grid is None:
        weight_grid = default_weight_grid()

    stressed = {(ctx.campaign_id, f): _stressed_log(ctx.train, f)
                for ctx in contexts for f in stress_factors}

    def score(strategy, entry):
        return _score(contexts, stressed, stress_factors, strategy, entry)

    zero = PidGains(0.0, 0.0, 0.0).to_list()
    tuned: dict = {}

    def warn_if_unsatisfied(strategy, s):
        if s[0] < 1.0:
            logger.warning("grid search for %s: no setting satisfied the CPC "
                           "margin on every training scenario (best ratio %.3f)",
                           strategy, s[0])

    if I_PID in strategies or M_PID in strategies:
        best_q, _ = _argmax(gain_grid, lambda g: score(
            I_PID, {"gains_p": zero, "gains_q": g.to_list()}))
        best_p, s = _argmax(gain_grid, lambda g: score(
            I_PID, {"gains_p": g.to_list(), "gains_q": best_q.to_list()}))
        ipid_entry = {"gains_p": best_p.to_list(), "gains_q": best_q.to_list(),
                      "alpha": 1.0, "beta": 1.0}
        if I_PID in strategies:
            tuned[I_PID] = ipid_entry
            warn_if_unsatisfied(I_PID, s)
        if M_PID in strategies:
            best_w, s_m = _argmax(weight_grid, lambda w: score(
                M_PID, dict(ipid_entry, alpha=w.alpha, beta=w.beta)))
            tuned[M_PID] = dict(ipid_entry, alpha=best_w.alpha, beta=best_w.beta)
            warn_if_unsatisfied(M_PID, s_m)

    if COST_MIN in strategies:
        best, s = _argmax(gain_grid, lambda g: score(
            COST_MIN, {"gains_b0": g.to_list()}))
        tuned[COST_MIN] = {"gains_b0": best.to_list()}
        warn_if_unsatisfied(COST_MIN, s)

    if FB_CONTROL in strategies:
        best, s = _argmax(gain_grid, lambda g: score(
            FB_CONTROL, {"gains_b0": g.to_list()}))
        tuned[FB_CONTROL] = {"gains_b0": best.to_list()}
        warn_if_unsatisfied(FB_CONTROL, s)

    if FB_CONTROL_M in strategies:
        best_cap, _ = _argmax(gain_grid, lambda g: score(
            FB_CONTROL_M, {"gains_b0": zero, "gains_cap": g.to_list()}))
        best_b0, s = _argmax(gain_grid, lambda g: score(
            FB_CONTROL_M, {"gains_b0": g.to_list(), "gains_cap": best_cap.to_list()}))
        tuned[FB_CONTROL_M] = {"gains_b0": best_b0.to_list(),
                               "gains_cap": best_cap.to_list()}
        warn_if_unsatisfied(FB_CONTROL_M, s)

    return tuned


def grid_search_per_campaign(contexts: Sequence[CampaignContext],
                             strategies: Sequence[str] | None = None,
                             gain_grid: Sequence[PidGains] | None = None,
                             weight_grid: Sequence[MpcWeights] | None = None,
                             stress_factors: Sequence[float] = DEFAULT_STRESS_FACTORS) -> dict:
    """Independent tuning per campaign instead of one pooled config."""
    return {PER_CAMPAIGN_KEY: {
        ctx.campaign_id: grid_search([ctx], strategies, gain_grid, weight_grid,
                                     stress_factors)
        for ctx in contexts}}


def build_batch(batch_cfg: Mapping) -> list[Campaign]:
    """Derive a deterministic campaign batch from a batch config.

    Each campaign gets its own seed and winning-price scale; its CPC cap is
    a per-campaign fraction of the raw click cost observed on its training
    day, and its budget is sized against the inventory cheaper than the
    cap so the constraints genuinely bind. ``fixed_cpc_caps`` pins chosen
    campaigns to an exact cap (the price scale is adjusted so the cap
    keeps the same relative bite).
    """
    base = SyntheticConfig.from_dict(batch_cfg["synthetic"])
    n_campaigns = int(batch_cfg.get("n_campaigns", 1))
    base_seed = int(batch_cfg.get("base_seed", base.rng_seed))
    derive = batch_cfg.get("derivation", {})
    cap_frac_lo, cap_frac_hi = derive.get("cpc_cap_fraction_range", [0.75, 0.9])
    ratio_lo, ratio_hi = derive.get("budget_click_ratio_range", [0.65, 0.95])
    wp_jitter = float(derive.get("wp_base_jitter", 0.0))
    fixed_caps = {int(k): float(v)
                  for k, v in (derive.get("fixed_cpc_caps") or {}).items()}

    rng = np.random.default_rng(base_seed)
    seeds = rng.integers(0, 2**31 - 1, size=n_campaigns)
    cap_fracs = rng.uniform(cap_frac_lo, cap_frac_hi, size=n_campaigns)
    ratios = rng.uniform(ratio_lo, ratio_hi, size=n_campaigns)
    jitters = np.exp(rng.uniform(-wp_jitter, wp_jitter, size=n_campaigns))

    campaigns = []
    for i in range(n_campaigns):
        synth = replace(base, rng_seed=int(seeds[i]),
                        wp_base=base.wp_base * float(jitters[i]))
        train = generate_log(synth, "train")
        raw_cpc = float(train.wp.sum() / train.ctr.sum())
        if i in fixed_caps:
            cap = fixed_caps[i]
            # rescale prices so the pinned cap has the intended relative bite
            scale = cap / (cap_fracs[i] * raw_cpc)
            synth = replace(synth, wp_base=synth.wp_base * float(scale))
            train = generate_log(synth, "train")
        else:
            cap = float(cap_fracs[i] * raw_cpc)
        item_cpc = np.divide(train.wp, train.ctr,
                             out=np.full(len(train), np.inf), where=train.ctr > 0)
        pool_clicks = float(train.ctr[item_cpc <= cap].sum())
        budget = cap * pool_clicks / float(ratios[i])
        budget = min(budget, 0.6 * float(train.wp.sum()))
        spec = CampaignSpec(campaign_id=f"c{i:02d}", budget=budget, cpc_cap=cap,
                            step_seconds=base.step_seconds, num_steps=base.num_steps)
        campaigns.append(Campaign(synth=synth, spec=spec))
    return campaigns
