import numpy as np
import pytest

from bidcontrol import (BidLog, CampaignSpec, Opportunity, brute_force_primal,
                        check_slackness, dual_objective,
                        hindsight_optimal_value, solve_dual)
from bidcontrol.lp import DualSolution, _margins

from conftest import random_log


def test_objective_hand_values(two_opp_log, two_opp_spec):
    # B*p + hinge terms, worked by hand:
    # (0.05, 0): 0.05 + max(0, 0.1 - 0.05) + max(0, 0.01 - 0.1) = 0.1
    assert dual_objective(two_opp_log, two_opp_spec, 0.05, 0.0) == pytest.approx(0.1)
    # (0, 0): all hinges active: 0.1 + 0.01
    assert dual_objective(two_opp_log, two_opp_spec, 0.0, 0.0) == pytest.approx(0.11)


def test_objective_asymptotic_budget_term(two_opp_log, two_opp_spec):
    # beyond max v/wp every hinge is dead, leaving exactly B*p
    p = 10.0
    assert dual_objective(two_opp_log, two_opp_spec, p, 0.0) == pytest.approx(
        two_opp_spec.budget * p, rel=1e-12)


def test_objective_rejects_negative_multipliers(two_opp_log, two_opp_spec):
    with pytest.raises(ValueError):
        dual_objective(two_opp_log, two_opp_spec, -0.1, 0.0)


def test_solve_two_opportunity(two_opp_log, two_opp_spec):
    sol = solve_dual(two_opp_log, two_opp_spec)
    assert sol.dual_objective == pytest.approx(0.1, abs=1e-7)
    # the reported objective equals the objective evaluated at (p, q)
    direct = dual_objective(two_opp_log, two_opp_spec, sol.p, sol.q)
    assert sol.dual_objective == pytest.approx(direct, rel=1e-9)
    assert sol.p >= 0 and sol.q >= 0


def test_solve_unbinding_constraints():
    log = BidLog.from_opportunities([
        Opportunity(0, 0, 1.0, 0.5, 0.2),
        Opportunity(1, 10, 0.5, 0.4, 0.1),
    ])
    # budget covers everything (1.5) and every wp/ctr (2, 1.25) is below the cap
    spec = CampaignSpec("free", budget=10.0, cpc_cap=5.0)
    sol = solve_dual(log, spec)
    total_value = float(log.value.sum())
    assert sol.dual_objective == pytest.approx(total_value, rel=1e-6)
    assert sol.p == pytest.approx(0.0, abs=1e-6)
    assert sol.q == pytest.approx(0.0, abs=1e-6)


def test_brute_force_hand_case(two_opp_log, two_opp_spec):
    value, assignment = brute_force_primal(two_opp_log, two_opp_spec)
    assert value == pytest.approx(0.1)
    assert assignment.tolist() == [1, 0]


def test_brute_force_zero_budget(two_opp_log):
    spec = CampaignSpec("zero", budget=0.0, cpc_cap=4.0)
    value, assignment = brute_force_primal(two_opp_log, spec)
    assert value == 0.0
    assert assignment.sum() == 0


def test_brute_force_cpc_infeasible_alone():
    log = BidLog.from_opportunities([Opportunity(0, 0, 3.0, 0.1, 0.5)])
    spec = CampaignSpec("tight", budget=100.0, cpc_cap=10.0)  # wp/ctr = 30 > 10
    value, assignment = brute_force_primal(log, spec)
    assert value == 0.0
    assert assignment.sum() == 0


def test_brute_force_size_guard():
    rng = np.random.default_rng(0)
    log = random_log(rng, 21)
    with pytest.raises(ValueError, match="N <= 20"):
        brute_force_primal(log, CampaignSpec("big", budget=1.0, cpc_cap=1.0))


def test_weak_duality_random_instances():
    rng = np.random.default_rng(42)
    for _ in range(40):
        log = random_log(rng, 10)
        spec = CampaignSpec("r", budget=float(rng.uniform(0.5, 5.0)),
                            cpc_cap=float(rng.uniform(1.0, 10.0)))
        best, _ = brute_force_primal(log, spec)
        sol = solve_dual(log, spec)
        assert sol.dual_objective >= best - 1e-9
        # any feasible dual point also dominates the integer optimum
        p, q = float(rng.uniform(0, 1)), float(rng.uniform(0, 1))
        assert dual_objective(log, spec, p, q) >= best - 1e-9


def test_strong_duality_vertex_gap():
    rng = np.random.default_rng(7)
    for _ in range(40):
        n = int(rng.integers(4, 13))
        log = random_log(rng, n)
        spec = CampaignSpec("r", budget=float(rng.uniform(0.5, 4.0)),
                            cpc_cap=float(rng.uniform(1.0, 8.0)))
        best, _ = brute_force_primal(log, spec)
        opt = hindsight_optimal_value(log, spec)
        assert best - 1e-9 <= opt <= best + 2 * float(log.value.max()) + 1e-9


def test_objective_convexity_probe():
    rng = np.random.default_rng(3)
    for _ in range(20):
        log = random_log(rng, 15)
        spec = CampaignSpec("r", budget=float(rng.uniform(0.5, 5.0)),
                            cpc_cap=float(rng.uniform(0.5, 8.0)))
        for _ in range(10):
            p1, q1, p2, q2 = rng.uniform(0, 2, 4)
            lam = float(rng.uniform(0, 1))
            mid = dual_objective(log, spec, lam * p1 + (1 - lam) * p2,
                                 lam * q1 + (1 - lam) * q2)
            chord = (lam * dual_objective(log, spec, p1, q1)
                     + (1 - lam) * dual_objective(log, spec, p2, q2))
            assert mid <= chord + 1e-9


def test_hindsight_nondecreasing_in_budget():
    rng = np.random.default_rng(5)
    log = random_log(rng, 200)
    spec = CampaignSpec("r", budget=0.0, cpc_cap=3.0)
    previous = -1.0
    for budget in (0.0, 1.0, 3.0, 10.0, 30.0, 1e4):
        value = hindsight_optimal_value(
            log, CampaignSpec("r", budget=budget, cpc_cap=spec.cpc_cap))
        assert value >= previous - 1e-9
        previous = value


def test_solution_tolerance_stability(two_opp_log, two_opp_spec):
    a = solve_dual(two_opp_log, two_opp_spec, tol=1e-6)
    b = solve_dual(two_opp_log, two_opp_spec, tol=5e-7)
    assert a.dual_objective == pytest.approx(b.dual_objective, abs=1e-8)


def test_hindsight_single_feasible_opportunity():
    log = BidLog.from_opportunities([Opportunity(0, 0, 1.0, 0.5, 0.2)])
    spec = CampaignSpec("one", budget=2.0, cpc_cap=5.0)
    assert hindsight_optimal_value(log, spec) == pytest.approx(0.1, abs=1e-8)


def test_slackness_certificate_at_optimum(two_opp_log, two_opp_spec):
    sol = solve_dual(two_opp_log, two_opp_spec)
    _, assignment = brute_force_primal(two_opp_log, two_opp_spec)
    report = check_slackness(two_opp_log, two_opp_spec, sol, assignment)
    assert report.max_violation <= 1e-6


def test_slackness_flags_zero_assignment_with_positive_r(two_opp_log, two_opp_spec):
    dual = DualSolution(p=0.0, q=0.0, dual_objective=0.11, iterations=0,
                        tolerance_achieved=0.0)
    report = check_slackness(two_opp_log, two_opp_spec, dual,
                             np.zeros(2))
    # r_i = v_i > 0 while x_i = 0 breaks (x - 1) * r = 0
    assert report.max_violation > 1e-3
    assert np.abs(report.lose_slack).max() > 1e-3


def test_slackness_flags_won_underbid(two_opp_log, two_opp_spec):
    # at (p, q) = (0.2, 0) the bid for opportunity 1 is v/p = 0.05 < wp = 2
    dual = DualSolution(p=0.2, q=0.0, dual_objective=0.0, iterations=0,
                        tolerance_achieved=0.0)
    report = check_slackness(two_opp_log, two_opp_spec, dual, np.ones(2))
    margins = _margins(two_opp_log, two_opp_spec, 0.2, 0.0)
    assert margins[1] < 0
    assert np.abs(report.win_slack).max() > 1e-3
    assert report.bids[1] < report.wp[1]
