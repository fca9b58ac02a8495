import math

import numpy as np
import pytest

from fairmech.approx import (
    PlanPolicy,
    TailState,
    bucket_length,
    execute_plan,
    make_policy,
    plan_bucketed,
    plan_early_stop,
    policy_values,
    stopping_round,
)
from fairmech.dynamic_solver import BOTH_FEASIBLE, LAST_ROUND, DynamicSolver
from fairmech.errors import ParameterError
from fairmech.sim import AuctionConfig, monte_carlo


def test_stopping_round_examples():
    assert stopping_round(0.7, 0.2) == 5
    assert stopping_round(0.9, 0.1) == 22
    assert stopping_round(0.5, 0.25) == 2  # exact power needs no extra round
    assert stopping_round(0.5, 0.0) == math.inf


def test_bucket_length_examples():
    assert bucket_length(0.99, 0.1) == 10
    assert bucket_length(0.7, 0.6) == 2
    with pytest.raises(ParameterError):
        bucket_length(0.7, 0.2)
    with pytest.raises(ParameterError):
        bucket_length(0.7, 1.0)


def test_early_stop_plan_fields():
    p = plan_early_stop(6, 0.7, (0.4, 0.4), 0.2)
    assert p.t0 == 5 and p.oracle_bound == 32
    assert p.levels == pytest.approx((0.2, 0.2))
    assert p.guarantee == pytest.approx((0.16, 0.16))
    assert len(p.weights) == 5
    assert plan_early_stop(10, 0.9, (0.3, 0.3), 0.1).t0 == 10


def test_bucketed_plan_fields():
    p = plan_bucketed(6, 0.7, (0.4, 0.4), 0.2, 0.6)
    assert p.bucket_len == 2 and p.t0 == 6
    assert p.weights == pytest.approx((1, 1, 0.49, 0.49, 0.2401, 0.2401))
    assert p.guarantee == pytest.approx((0.8 * 0.16 * 0.2,) * 2)
    assert p.oracle_bound <= 2**p.t0
    g = plan_bucketed(50, 0.99, (0.4, 0.5), 0.1, 0.1).guarantee
    assert g[0] == pytest.approx(0.9 * 0.81 * 0.3)


def test_plan_parameter_errors():
    with pytest.raises(ParameterError):
        plan_early_stop(6, 0.7, (0.4, 0.4), 0.5)
    with pytest.raises(ParameterError):
        plan_early_stop(6, 1.5, (0.4, 0.4), 0.1)
    with pytest.raises(ParameterError):
        plan_early_stop(6, 0.7, (0.7, 0.4), 0.1)
    with pytest.raises(ParameterError):
        plan_bucketed(0, 0.7, (0.4, 0.4), 0.1, 0.5)


def test_unit_discount_gives_exact_plan():
    p = plan_early_stop(4, 1.0, (0.3, 0.3), 0.1)
    assert p.scheme == "exact" and p.t0 == 4 and p.levels == (0.3, 0.3)
    assert isinstance(make_policy(p, AuctionConfig.two_uniform(T=4).profile), DynamicSolver)


def test_zero_epsilon_reduces_to_exact():
    cfg = AuctionConfig.two_uniform(0.3, 0.3, T=6, delta=0.7)
    plan = plan_early_stop(6, 0.7, cfg.alphas, 0.0)
    assert plan.t0 == 6
    policy = make_policy(plan, cfg.profile)
    policy.solve()
    exact = DynamicSolver(cfg.profile, cfg.alphas, delta=0.7).solve()
    assert policy_values(policy, 0.7).mu == pytest.approx(exact.mu, abs=1e-9)


def test_policy_values_match_exact_interim():
    cfg = AuctionConfig.two_uniform(0.25, 0.2, T=4, delta=0.8)
    solver = DynamicSolver(cfg.profile, cfg.alphas, delta=0.8)
    top = solver.solve()
    vals = policy_values(solver, 0.8)
    assert vals.mu == pytest.approx(top.mu, abs=1e-9)
    assert vals.nu == pytest.approx([top.nu1, top.nu2], abs=1e-9)
    assert np.all(vals.shares >= np.array(cfg.alphas) - 1e-7)


def test_tail_rounds_are_unconstrained():
    cfg = AuctionConfig.two_uniform(0.3, 0.3, T=6, delta=0.7)
    policy = PlanPolicy(plan_early_stop(6, 0.7, cfg.alphas, 0.2), cfg.profile)
    s = policy.root()
    for g in (1, 2, 1, 2):
        s = policy.child(s, g)
    assert s.t == 5 and not isinstance(s, TailState)
    tail = policy.child(s, 2)
    assert isinstance(tail, TailState) and tail.t == 6
    assert policy.solve_round(tail).regime == LAST_ROUND
    assert policy.solve_round(tail).rule.gamma == 0 and policy.feasible(tail)
    # the fair phase must hand over with the item allocated
    last_fair = policy.solve_round(s)
    assert last_fair.regime == LAST_ROUND and last_fair.rule.must_allocate


def test_plan_dominates_exact_and_respects_call_bound():
    cfg = AuctionConfig.two_uniform(0.3, 0.3, T=6, delta=0.7)
    exact = DynamicSolver(cfg.profile, cfg.alphas, delta=0.7).solve()
    for plan in (plan_early_stop(6, 0.7, cfg.alphas, 0.2), plan_bucketed(6, 0.7, cfg.alphas, 0.2, 0.6)):
        policy = make_policy(plan, cfg.profile)
        policy.solve()
        assert policy_values(policy, 0.7).mu >= exact.mu - 1e-6
        assert policy.oracle_calls <= plan.oracle_bound


def test_plan_fairness_by_simulation():
    cfg = AuctionConfig.two_uniform(0.3, 0.3, T=6, delta=0.7, replications=5000)
    plan = plan_early_stop(6, 0.7, cfg.alphas, 0.2)
    summary = monte_carlo(cfg, make_policy(plan, cfg.profile))
    assert np.all(summary.mean_share >= np.array(plan.guarantee) - 3 * summary.se_share)


def test_execute_plan_runs_one_trajectory():
    cfg = AuctionConfig.two_uniform(0.3, 0.3, T=6, delta=0.7)
    ex = execute_plan(plan_early_stop(6, 0.7, cfg.alphas, 0.2), cfg, np.random.default_rng(1))
    assert len(ex.mechanisms) == 6
    assert ex.mechanisms[-1].regime == LAST_ROUND
    assert all(m.regime != "infeasible" for m in ex.mechanisms)
    assert 0 < ex.oracle_calls <= 32
    assert ex.mechanisms[0].regime == BOTH_FEASIBLE
