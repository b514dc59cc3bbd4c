import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from apmode.comm import CommStats
from apmode.solver import (
    ConicProblem,
    SOCBlock,
    Status,
    constraint_violation,
    min_power_p1,
    problem_from_json,
    problem_to_json,
    solve_conic,
)
from oracles import barrier_socp, p1_grid


def random_socp(seed, n=None):
    """Bounded SOCP with a known strictly feasible point."""
    rng = np.random.default_rng(seed)
    n = n or int(rng.integers(3, 20))
    x0 = rng.uniform(-0.5, 0.5, n)
    socs, raw = [], []
    for _ in range(int(rng.integers(1, 4))):
        m = int(rng.integers(2, 6))
        F = rng.standard_normal((m, n))
        g = rng.standard_normal(m)
        f = rng.standard_normal(n)
        h = np.linalg.norm(F @ x0 + g) - f @ x0 + rng.uniform(0.1, 1.0)
        socs.append(SOCBlock(F, g, f, h))
        raw.append((F, g, f, h))
    k = int(rng.integers(0, 5))
    A = rng.standard_normal((k, n))
    b = A @ x0 + rng.uniform(0.1, 1.0, k)
    c = rng.standard_normal(n)
    lb, ub = -np.ones(n), np.ones(n)
    return ConicProblem(c=c, socs=socs, A_ub=A, b_ub=b, lb=lb, ub=ub), (c, raw, A, b, lb, ub, x0)


def test_scalar_sinr_closed_form():
    # minimize rho s.t. sqrt(gamma) * sigma <= d * rho, gamma=100, d=2, sigma=1
    p = ConicProblem(c=np.array([1.0]), socs=[SOCBlock(np.zeros((1, 1)), np.array([10.0]), np.array([2.0]), 0.0)],
                     lb=np.zeros(1))
    out = solve_conic(p)
    assert out.status == Status.OPTIMAL
    assert out.x[0] == pytest.approx(5.0, rel=1e-7)
    assert out.x[0] ** 2 == pytest.approx(25.0, rel=1e-7)


def test_contradictory_bounds_infeasible():
    p = ConicProblem(c=np.zeros(1), A_ub=np.array([[1.0], [-1.0]]), b_ub=np.array([0.0, -1.0]))
    out = solve_conic(p)
    assert out.status == Status.INFEASIBLE
    assert out.certificate is not None


def test_infeasible_cone_has_certificate():
    # ||x|| <= -1 has no solution
    p = ConicProblem(c=np.zeros(2), socs=[SOCBlock(np.eye(2), np.zeros(2), np.zeros(2), -1.0)])
    out = solve_conic(p)
    assert out.status == Status.INFEASIBLE and out.certificate is not None


@pytest.mark.parametrize("seed", range(12))
def test_matches_barrier_reference(seed):
    p, args = random_socp(seed)
    out = solve_conic(p)
    _, ref = barrier_socp(*args)
    assert out.status == Status.OPTIMAL
    assert out.objective == pytest.approx(ref, abs=1e-5 * max(1.0, abs(ref)))
    assert constraint_violation(p, out.x) <= 1e-7


@given(st.integers(0, 2**31 - 1))
def test_optimal_answers_pass_independent_check(seed):
    p, _ = random_socp(seed)
    out = solve_conic(p)
    assert out.status == Status.OPTIMAL
    assert constraint_violation(p, out.x) <= 1e-7
    assert out.best_bound is None or out.best_bound <= out.objective + 1e-6


def test_json_roundtrip():
    p, _ = random_socp(3)
    text = problem_to_json(p, [0, 2])
    q, binaries = problem_from_json(text)
    assert list(binaries) == [0, 2]
    assert np.array_equal(q.c, p.c) and np.array_equal(q.socs[0].F, p.socs[0].F)
    assert solve_conic(q).objective == pytest.approx(solve_conic(p).objective, rel=1e-9)


def scalar_stats():
    return CommStats(np.array([[2.0]]), np.zeros((1, 1, 1, 1)), 1.0)


def test_p1_scalar_infeasible_under_cap():
    assert min_power_p1(scalar_stats(), [1], 100.0, 1.0).status == Status.INFEASIBLE


def test_p1_scalar_optimum():
    out = min_power_p1(scalar_stats(), [1], 100.0, 30.0)
    assert out.status == Status.OPTIMAL
    assert out.objective == pytest.approx(25.0, rel=1e-7)
    assert out.info["powers"][0, 0] == pytest.approx(25.0, rel=1e-7)


def test_p1_inactive_ap_carries_no_power():
    d = np.array([[1.0, 2.0]])
    stats = CommStats(d, np.zeros((1, 1, 2, 2)), 1.0)
    out = min_power_p1(stats, [0, 1], 4.0, 10.0)
    assert out.status == Status.OPTIMAL
    assert out.info["powers"][0, 0] == 0.0
    assert out.objective == pytest.approx(1.0, rel=1e-7)  # 2 * sqrt(p) >= 2


def toy_stats(seed, K, L):
    rng = np.random.default_rng(seed)
    d = rng.uniform(0.5, 2.0, (K, L))
    C = np.zeros((K, K, L, L))
    for k in range(K):
        for i in range(K):
            M = 0.15 * rng.standard_normal((L, L))
            C[k, i] = M @ M.T
    return CommStats(d, C, float(rng.uniform(0.02, 0.1)))


@pytest.mark.parametrize("seed", range(4))
@pytest.mark.parametrize("shape", [(2, 1), (1, 2)])
def test_p1_matches_grid_search(seed, shape):
    stats = toy_stats(seed, *shape)
    gamma = 1.5
    ref, _ = p1_grid(stats, gamma, 1.0)
    out = min_power_p1(stats, np.ones(shape[1]), gamma, 1.0)
    if np.isinf(ref):
        assert out.status == Status.INFEASIBLE
    else:
        assert out.status == Status.OPTIMAL
        assert out.objective == pytest.approx(ref, abs=1e-4)
