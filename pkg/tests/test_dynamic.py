import math

import numpy as np
import pytest

from fairmech.dist import GroupProfile, TruncatedExponential, Uniform
from fairmech.dynamic_solver import (
    BOTH_FEASIBLE,
    FORCED,
    INFEASIBLE,
    LAST_ROUND,
    DynamicSolver,
    ResidualState,
    residual_init,
    residual_update,
    resolve_round,
    terminal_feasible,
)
from fairmech.errors import InfeasibleError, ParameterError, RegimeError
from fairmech.static_solver import AffineRule, region_probability, solve_static, static_interim

U01 = Uniform(0.0, 1.0)
MIXED = (Uniform(0.0, 1.0), Uniform(-0.5, 0.5))


def mixed_profile(T, n=1):
    return GroupProfile.constant(*MIXED, T, n)


def sym_profile(T, n=1):
    return GroupProfile.constant(U01, U01, T, n)


def test_residual_examples():
    s = residual_init(2, 0.5, 0.4, 0.4)
    assert (s.r1, s.r2) == pytest.approx((0.6, 0.6))
    c = residual_update(s, 1, 0.5)
    assert c.t == 2 and (c.r1, c.r2) == pytest.approx((0.0, 1.2))
    c = residual_update(s, 0, 0.5)
    assert (c.r1, c.r2) == pytest.approx((1.2, 1.2))
    assert residual_init(4, 1.0, 0.25, 0.5).residuals == pytest.approx((1.0, 2.0))


def test_residual_init_rejects_bad_parameters():
    with pytest.raises(ParameterError):
        residual_init(2, 0.0, 0.1, 0.1)
    with pytest.raises(ParameterError):
        residual_init(0, 0.5, 0.1, 0.1)


def test_terminal_feasibility():
    assert terminal_feasible(0.6, 0.4)
    assert terminal_feasible(1.0, 0.0)
    assert not terminal_feasible(0.6, 0.6)
    assert not terminal_feasible(1.2, 0.0)


def test_infeasible_half_discount_example():
    solver = DynamicSolver(mixed_profile(2), (0.4, 0.4), delta=0.5)
    assert not solver.feasible(solver.root())
    with pytest.raises(InfeasibleError, match="1.2"):
        solver.solve()
    assert solver.solve_round(solver.root()).regime == INFEASIBLE


def test_infeasible_after_three_group1_wins():
    solver = DynamicSolver(sym_profile(4), (1 / 3, 1 / 3), delta=1.0)
    s = solver.root()
    assert solver.feasible(s)
    for _ in range(3):
        s = solver.child(s, 1)
    assert s.t == 4 and not solver.feasible(s)


def test_forced_regime():
    solver = DynamicSolver(sym_profile(3), (0.5, 0.5), delta=1.0)
    solver.solve()
    s = solver.child(solver.root(), 1)
    mech = solver.solve_round(s)
    assert mech.regime == FORCED and mech.group == 2
    # forced winner pays the larger of the runner-up bid and the support floor
    _, buyer, pay = resolve_round(mech, np.array([0.95]), np.array([0.3]))
    assert buyer == 0 and pay.total[1, 0] == pytest.approx(0.0) and pay.total[0, 0] == 0
    solver2 = DynamicSolver(sym_profile(3, n=2), (0.5, 0.5), delta=1.0)
    solver2.solve()
    mech2 = solver2.solve_round(solver2.child(solver2.root(), 1))
    w, k, pay = resolve_round(mech2, np.array([0.99, 0.98]), np.array([0.4, 0.9]))
    assert (w, k) == (2, 1) and pay.total[1, 1] == pytest.approx(0.4)


def test_forced_interim_values():
    solver = DynamicSolver(sym_profile(3), (0.5, 0.5), delta=1.0)
    solver.solve()
    s = solver.child(solver.root(), 1)
    kid = solver.interim(solver.child(s, 2))
    v = solver.interim(s)
    # a lone forced buyer pays the support floor 0 and keeps the whole value
    assert v.mu == pytest.approx(kid.mu)
    assert v.nu2 == pytest.approx(0.5 + kid.nu2)
    assert v.nu1 == pytest.approx(kid.nu1)


def test_last_round_equals_static_solution():
    solver = DynamicSolver(mixed_profile(2), (0.0, 0.0), delta=1.0)
    s = ResidualState(2, 0.3, 0.3, ("probe",))
    mech = solver.solve_round(s)
    sol = solve_static(MIXED, 1, 0.3, 0.3)
    assert mech.regime == LAST_ROUND and mech.rule == sol.rule
    v = solver.interim(s)
    assert (v.mu, v.nu1, v.nu2) == pytest.approx((sol.seller_utility, sol.buyer_utility_1, sol.buyer_utility_2))


def test_deltas_one_round_before_end():
    solver = DynamicSolver(mixed_profile(2), (0.2, 0.2), delta=0.99)
    root = solver.root()
    d = solver.deltas(root)
    c1, c2 = solver.child(root, 1), solver.child(root, 2)
    i1 = static_interim(solver.solve_round(c1).rule, MIXED, 1)
    i2 = static_interim(solver.solve_round(c2).rule, MIXED, 1)
    assert d.d1 == pytest.approx(i2[1] - i1[1], abs=1e-10)
    assert d.d2 == pytest.approx(i1[2] - i2[2], abs=1e-10)
    assert d.d0 == pytest.approx(i1[0] - i2[0], abs=1e-10)
    mech = solver.solve_round(root)
    assert mech.regime == BOTH_FEASIBLE
    assert mech.threshold == pytest.approx(0.99 * (d.d1 - d.d2) - 0.99 * d.d0)
    with pytest.raises(RegimeError):
        solver.deltas(c1)


def test_reference_values():
    solver = DynamicSolver(mixed_profile(2), (0.2, 0.2), delta=0.99)
    v = solver.solve()
    assert (v.mu, v.nu1, v.nu2) == pytest.approx((0.32963, 0.39341, 0.16717), abs=1e-5)


@pytest.mark.parametrize("n", [1, 2])
def test_symmetric_instance_is_symmetric(n):
    solver = DynamicSolver(sym_profile(3, n), (0.3, 0.3), delta=0.9)
    v = solver.solve()
    mech = solver.solve_round(solver.root())
    assert mech.threshold == pytest.approx(0.0, abs=1e-9)
    assert mech.deltas.d1 == pytest.approx(mech.deltas.d2, abs=1e-9)
    assert mech.deltas.d0 == pytest.approx(0.0, abs=1e-9)
    assert mech.zeta1 == pytest.approx(mech.zeta2, abs=1e-9)
    assert v.nu1 == pytest.approx(v.nu2, abs=1e-9)


def test_single_buyer_has_no_entry_fee():
    solver = DynamicSolver(mixed_profile(3), (0.3, 0.3), delta=0.9)
    solver.solve()
    mech = solver.solve_round(solver.root())
    assert mech.zeta1 == 0 and mech.zeta2 == 0
    _, _, pay = resolve_round(mech, np.array([[0.7], [0.1]]), np.array([[0.2], [0.4]]))
    assert not pay.entry_fee.any()


def test_reward_paid_by_winning_group_only():
    solver = DynamicSolver(mixed_profile(3, n=2), (0.3, 0.3), delta=0.9)
    solver.solve()
    mech = solver.solve_round(solver.root())
    w, _, pay = resolve_round(mech, np.array([0.9, 0.3]), np.array([0.1, 0.0]))
    assert w == 1
    assert pay.reward[0] == pytest.approx([-0.9 * mech.deltas.d1] * 2)
    assert not pay.reward[1].any()
    assert pay.entry_fee[1] == pytest.approx([0.9 * mech.deltas.d2 * mech.zeta2] * 2)


def test_zeta_matches_monte_carlo():
    prof = GroupProfile.constant(TruncatedExponential(2.0, 0.0, 1.0), Uniform(-0.2, 0.8), 3, 2)
    solver = DynamicSolver(prof, (0.35, 0.35), delta=0.8)
    solver.solve()
    root = solver.root()
    mech = solver.solve_round(root)
    assert mech.regime == BOTH_FEASIBLE
    rng = np.random.default_rng(5)
    m = 200_000
    d1, d2 = prof.round(1)
    # buyer 0 of group g is absent; the rest bid truthfully
    v1 = d1.ppf(rng.random((m, 2)))
    v2 = d2.ppf(rng.random((m, 2)))
    for g, z in ((1, mech.zeta1), (2, mech.zeta2)):
        own, other = (v1, v2) if g == 1 else (v2, v1)
        dg = mech.dists[g - 1]
        do = mech.dists[2 - g]
        phi_own = dg.virtual_value(own[:, 1])
        phi_other = do.virtual_value(other.max(axis=1))
        d = mech.deltas
        if g == 1:
            thr = mech.rho * (d.d1 - 2 * d.d2 - d.d0)
            hits = phi_own - phi_other >= thr
        else:
            thr = -(mech.rho * (d.d2 - 2 * d.d1 + d.d0))
            hits = phi_other - phi_own <= thr
        se = math.sqrt(z * (1 - z) / m)
        assert abs(hits.mean() - z) < 3 * se + 1e-9


def test_memo_and_oracle_counts_quadratic():
    for T in (4, 8):
        solver = DynamicSolver(sym_profile(T), (0.3, 0.3), delta=1.0)
        solver.solve()
        assert solver.memo_size <= T * (T + 1) // 2
        assert solver.oracle_calls <= solver.memo_size


def test_memo_is_order_independent():
    a = DynamicSolver(mixed_profile(4), (0.25, 0.25), delta=0.9)
    b = DynamicSolver(mixed_profile(4), (0.25, 0.25), delta=0.9)
    # warm b's cache bottom-up before asking for the root
    s = b.root()
    leaves = [b.child(b.child(b.child(s, g1), g2), g3) for g1 in (1, 2) for g2 in (1, 2) for g3 in (0, 1, 2)]
    for leaf in leaves:
        b.interim(leaf)
    assert a.solve() == b.solve()


def test_solver_rejects_bad_parameters():
    with pytest.raises(ParameterError):
        DynamicSolver(mixed_profile(2), (0.2, 0.2))
    with pytest.raises(ParameterError):
        DynamicSolver(mixed_profile(2), (0.2, 0.2), weights=[1.0])
    with pytest.raises(ParameterError):
        DynamicSolver(mixed_profile(2), (-0.1, 0.2), delta=0.5)


def test_unconstrained_first_round_matches_static_rule():
    # with no fairness demand the round-1 threshold vanishes only if continuations agree
    solver = DynamicSolver(mixed_profile(2), (0.0, 0.0), delta=0.99)
    solver.solve()
    mech = solver.solve_round(solver.root())
    assert mech.regime == BOTH_FEASIBLE
    assert mech.threshold == pytest.approx(0.0, abs=1e-12)
    p1 = region_probability(AffineRule.full(0.0), MIXED, 1, 1)
    assert 0 < p1 < 1
