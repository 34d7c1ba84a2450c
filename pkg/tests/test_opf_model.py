import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from migan_opf.case_io import load_builtin, parse_case
from migan_opf.opf_model import (
    ModelError,
    SolutionPool,
    build_problem,
    check_feasibility,
    evaluate_candidate,
    recover_theta,
)

from conftest import CASES, highs_dcopf

# inequality rows per case: 24, 86, 112, 168, 410 for the benchmark systems
N_CONSTRAINTS = {"case9": 24, "case30": 86, "case39": 112, "case57": 168, "case118": 410}


@pytest.mark.parametrize("name", CASES)
def test_constraint_counts(problems, name):
    p = problems[name]
    A, b = p.inequality_system()
    assert p.n_ineq == A.shape[0] == b.shape[0] == N_CONSTRAINTS[name]


@pytest.mark.parametrize("name", CASES)
def test_bbus_matches_incidence_construction(problems, name):
    case = load_builtin(name)
    p = problems[name]
    index = {b.id: k for k, b in enumerate(case.buses)}
    live = [br for br in case.branches if br.status]
    inc = np.zeros((len(live), case.n_b))
    for r, br in enumerate(live):
        inc[r, index[br.from_bus]] = 1
        inc[r, index[br.to_bus]] = -1
    b = np.array([1 / br.reactance for br in live])
    np.testing.assert_allclose(p.Bbus, inc.T @ np.diag(b) @ inc, atol=1e-9)


@pytest.mark.parametrize("name", CASES)
def test_recovered_angles_satisfy_nodal_balance(problems, name):
    p = problems[name]
    rng = np.random.default_rng(0)
    disp = p.rebalance(rng.uniform(p.p_g_min, p.p_g_max, size=(20, p.n_g)))
    theta, residual = recover_theta(p, disp)
    assert np.abs(residual).max() < 1e-9
    assert np.all(theta[:, p.slack_bus] == 0)
    injection = disp @ p.Mg.T - p.rho * (p.Md @ p.p_d)
    np.testing.assert_allclose(theta @ p.Bbus.T, injection, atol=1e-8)


def test_unbalanced_dispatch_reports_residual(case9):
    p = case9.rebalance(np.array([0.5, 1.0, 1.0]))
    theta, residual = recover_theta(case9, p + np.array([0.1, 0, 0]))
    assert residual == pytest.approx(0.1)
    cand = evaluate_candidate(case9, p + np.array([0.1, 0, 0]))
    assert not cand.feasible


def test_rebalance_map_is_rebalance(case9):
    S, s0 = case9.rebalance_map()
    x = np.random.default_rng(1).normal(size=(7, case9.n_g))
    np.testing.assert_allclose(x @ S + s0, case9.rebalance(x))


def test_with_rho_scales_loads(case9):
    scaled = case9.with_rho(1.3)
    assert scaled.total_load == pytest.approx(1.3 * case9.total_load)
    fresh = build_problem(load_builtin("case9"), rho=1.3)
    np.testing.assert_allclose(scaled.theta_load, fresh.theta_load)
    with pytest.raises(ModelError):
        case9.with_rho(0)


@pytest.mark.parametrize("name", CASES)
def test_oracle_optimum_is_feasible_and_flows_match(problems, name):
    p = problems[name]
    res = highs_dcopf(p)
    pg, theta_hi = res.x[: p.n_g], res.x[p.n_g:]
    cand = evaluate_candidate(p, pg)
    np.testing.assert_allclose(cand.theta, theta_hi, atol=1e-7)
    assert check_feasibility(p, cand)
    assert cand.objective == pytest.approx(res.fun, rel=1e-9)


def test_infeasible_after_exceeding_generator_limit(case9):
    pg = highs_dcopf(case9).x[: case9.n_g].copy()
    j = next(k for k in range(case9.n_g) if k != case9.slack_gen)
    pg[j] = case9.p_g_max[j] + 1e-3
    assert not check_feasibility(case9, evaluate_candidate(case9, case9.rebalance(pg)))


def test_tolerance_boundary(case9):
    # the optimum has the last unit at its upper limit; shift a little output onto it from the middle unit
    pg = highs_dcopf(case9).x[: case9.n_g]
    assert pg[2] == pytest.approx(case9.p_g_max[2])
    for delta, expect in ((0.5e-6, True), (5e-6, False)):
        x = pg.copy()
        x[2] = case9.p_g_max[2] + delta
        x[1] -= delta
        assert check_feasibility(case9, evaluate_candidate(case9, x)) is expect


def test_relaxation_mask_ignores_rows(case9):
    res = highs_dcopf(case9)
    pg = res.x[: case9.n_g].copy()
    j = next(k for k in range(case9.n_g) if k != case9.slack_gen)
    pg[j] = case9.p_g_max[j] + 0.01
    pg = case9.rebalance(pg)
    pool = case9.evaluate(pg)
    viol = case9.violations(pool.p_g, pool.theta)[0]
    mask = viol > case9.tol
    relaxed = case9.with_relaxation(mask)
    cand = evaluate_candidate(relaxed, pg)
    assert check_feasibility(relaxed, cand, honor_relaxation=True)
    assert not check_feasibility(relaxed, cand, honor_relaxation=False)


def test_disconnected_network_rejected():
    text = """
mpc.baseMVA = 100;
mpc.bus = [
1 3 0 0 0 0 1 1 0 345 1 1.1 0.9;
2 1 50 0 0 0 1 1 0 345 1 1.1 0.9;
3 1 50 0 0 0 1 1 0 345 1 1.1 0.9;
];
mpc.gen = [
1 0 0 0 0 1 100 1 200 0;
];
mpc.branch = [
1 2 0 0.1 0 100 0 0 0 0 1;
];
mpc.gencost = [
2 0 0 2 10 0;
];
"""
    with pytest.raises(ModelError, match="connected"):
        build_problem(parse_case(text))


def test_zero_rating_is_unlimited_with_warning():
    text = """
mpc.baseMVA = 100;
mpc.bus = [
1 3 0 0 0 0 1 1 0 345 1 1.1 0.9;
2 1 50 0 0 0 1 1 0 345 1 1.1 0.9;
];
mpc.gen = [
1 0 0 0 0 1 100 1 200 0;
];
mpc.branch = [
1 2 0 0.1 0 0 0 0 0 0 1;
];
mpc.gencost = [
2 0 0 2 10 0;
];
"""
    with pytest.warns(UserWarning, match="unlimited"):
        p = build_problem(parse_case(text))
    assert p.n_line == 0 and p.n_ineq == 2


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_batch_and_single_evaluation_agree(seed):
    p = build_problem(load_builtin("case9"))
    rng = np.random.default_rng(seed)
    x = p.rebalance(rng.uniform(p.p_g_min, p.p_g_max, size=(8, p.n_g)))
    pool = p.evaluate(x, honor_relaxation=False)
    for i in range(len(pool)):
        c = evaluate_candidate(p, x[i])
        assert c.feasible == pool.feasible[i]
        assert c.objective == pytest.approx(pool.objective[i])


def test_pool_helpers(case9):
    x = case9.rebalance(np.tile([0.5, 1.0, 1.0], (4, 1)))
    a = case9.evaluate(x)
    b = case9.evaluate(x * 0)
    mixed = SolutionPool.choose(np.array([True, False, True, False]), a, b)
    assert mixed.objective.tolist() == [a.objective[0], 0.0, a.objective[2], 0.0]
    assert len(SolutionPool.concat([a, b])) == 8
    assert len(SolutionPool.empty(3, 9)) == 0
    assert a.features().shape == (4, 3 + 9)
    with pytest.raises(ValueError):
        SolutionPool.choose(np.ones(4, bool), a, a.take(slice(0, 2)))
