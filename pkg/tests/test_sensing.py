import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from apmode.errors import DegenerateGeometry, SingularFIM
from apmode.scenario import SPEED_OF_LIGHT, ScenarioConfig, build_scenario
from apmode.sensing import (
    EPS_DET,
    GMatrices,
    crlb_many,
    crlb_trace,
    fim_oracle,
    geometry_matrices,
    linear_sensing_constraint,
    propagation_delay,
    xi_constant,
)
from oracles import fim_entries_loop


def cross_scenario(d=100.0, n=4):
    """TX candidates at (+-d, 0), RX candidates at (0, +-d), target at the origin, |beta| = 1."""
    aps = [[d, 0, 10], [-d, 0, 10], [0, d, 10], [0, -d, 10]]
    return build_scenario(ScenarioConfig(n_aps=4, ap_positions=aps, target_position=[0.0, 0.0],
                                         rcs=1.0, n_antennas=n, seed=0))


def test_delay_one_second():
    assert propagation_delay(149_896_229.0, 149_896_229.0) == pytest.approx(1.0, rel=1e-15)


def test_delay_rejects_zero_range():
    with pytest.raises(DegenerateGeometry):
        propagation_delay(300.0, 0.0)


@given(st.floats(1, 1e5), st.floats(1, 1e5))
def test_delay_formula(r1, r2):
    assert propagation_delay(r1, r2) == pytest.approx((r1 + r2) / SPEED_OF_LIGHT, rel=1e-15)


def test_colocated_diagonal_entry():
    R, N = 50.0, 4
    s = build_scenario(ScenarioConfig(n_aps=2, ap_positions=[[R, 0, 10], [0, R, 10]], target_position=[0, 0],
                                      rcs=1.0, n_antennas=N))
    g = geometry_matrices(s)
    assert g.g_a[0, 0] == pytest.approx(4 * g.xi * N**2 / R**4, rel=1e-14)
    assert g.g_b[0, 0] == 0.0 and g.g_c[0, 0] == 0.0
    assert g.g_c[0, 1] == pytest.approx(g.xi * N**2 / R**4, rel=1e-14)


def test_xi_value():
    assert xi_constant(100e6, 12, 2e-12) == pytest.approx(
        8 * np.pi**2 * 1e16 / (144 * SPEED_OF_LIGHT**2 * 2e-12), rel=1e-14)


@given(st.integers(0, 2**31 - 1))
def test_g_entries_match_scalar_loop(seed):
    s = build_scenario(ScenarioConfig(n_aps=5, seed=seed))
    g = geometry_matrices(s)
    xy = s.ap_positions[:, :2]
    for m, n in itertools.product(range(5), range(5)):
        a = np.zeros(5)
        b = np.zeros(5)
        a[m] = b[n] = 1
        fxx, fyy, fxy = fim_entries_loop(xy, s.target_position, s.rcs, g.xi, s.n_antennas, a, b, 1.0)
        assert g.g_a[m, n] == pytest.approx(fxx, rel=1e-12)
        assert g.g_b[m, n] == pytest.approx(fyy, rel=1e-12)
        assert g.g_c[m, n] == pytest.approx(fxy, rel=1e-12, abs=1e-300)
    for mat in (g.g_a, g.g_b, g.g_c):
        assert np.allclose(mat, mat.T, rtol=1e-12, atol=0)
    assert np.all(g.g_a >= 0) and np.all(g.g_b >= 0)


def test_no_transmitter_is_singular():
    g = geometry_matrices(cross_scenario())
    with pytest.raises(SingularFIM):
        crlb_trace(g, np.zeros(4), np.array([0, 0, 1, 1.0]), 1.0)
    assert crlb_trace(g, np.zeros(4), np.array([0, 0, 1, 1.0]), 1.0, singular="inf") == np.inf


def test_symmetric_cross_closed_form():
    d, N, ps = 100.0, 4, 2.0
    g = geometry_matrices(cross_scenario(d, N))
    a = np.array([1, 1, 0, 0.0])
    b = np.array([0, 0, 1, 1.0])
    expected = d**4 / (2 * ps * g.xi * N**2)
    assert crlb_trace(g, a, b, ps) == pytest.approx(expected, rel=1e-12)
    info, inv_trace = fim_oracle(g, a, b, ps)
    assert info.f_xy == pytest.approx(0.0, abs=1e-12 * info.f_xx)
    assert info.f_xx == pytest.approx(4 * ps * g.xi * N**2 / d**4, rel=1e-12)
    assert inv_trace == pytest.approx(expected, rel=1e-12)


def test_single_pair_oracle_entries():
    g = geometry_matrices(build_scenario(ScenarioConfig(n_aps=4, seed=3)))
    a = np.array([0, 1, 0, 0.0])
    b = np.array([0, 0, 0, 1.0])
    # one pair gives a rank-one FIM, so the oracle reports it as singular
    with pytest.raises(SingularFIM) as exc:
        fim_oracle(g, a, b, 3.0)
    info = exc.value.info
    assert (info.f_xx, info.f_yy, info.f_xy) == pytest.approx((3 * g.g_a[1, 3], 3 * g.g_b[1, 3], 3 * g.g_c[1, 3]))
    assert crlb_trace(g, a, b, 3.0, singular="inf") == np.inf


def random_modes(rng, L):
    modes = rng.integers(0, 3, L)
    return (modes == 1).astype(float), (modes == 2).astype(float)


@given(st.integers(0, 2**31 - 1))
def test_crlb_equals_oracle_and_fim_psd(seed):
    rng = np.random.default_rng(seed)
    L = int(rng.integers(2, 13))
    g = geometry_matrices(build_scenario(ScenarioConfig(n_aps=L, seed=seed)))
    for _ in range(10):
        a, b = random_modes(rng, L)
        try:
            info, inv = fim_oracle(g, a, b, 1.0)
        except SingularFIM:
            assert crlb_trace(g, a, b, 1.0, singular="inf") == np.inf
            continue
        assert info.f_xx >= 0 and info.f_yy >= 0 and info.det >= 0
        assert crlb_trace(g, a, b, 1.0) == pytest.approx(inv, rel=1e-9)
        assert crlb_many(g, a, b, 1.0)[0] == pytest.approx(inv, rel=1e-9)


def test_oracle_identity_exhaustive_small():
    L = 6
    g = geometry_matrices(build_scenario(ScenarioConfig(n_aps=L, seed=21)))
    for modes in itertools.product(range(3), repeat=L):
        m = np.array(modes)
        a, b = (m == 1).astype(float), (m == 2).astype(float)
        c = crlb_trace(g, a, b, 1.0, singular="inf")
        if np.isinf(c):
            continue
        assert c == pytest.approx(fim_oracle(g, a, b, 1.0)[1], rel=1e-9)


@given(st.integers(0, 2**31 - 1))
def test_adding_receiver_or_transmitter_never_hurts(seed):
    rng = np.random.default_rng(seed)
    L = 8
    g = geometry_matrices(build_scenario(ScenarioConfig(n_aps=L, seed=seed)))
    a, b = random_modes(rng, L)
    off = np.flatnonzero((a == 0) & (b == 0))
    if off.size == 0:
        return
    base = crlb_trace(g, a, b, 1.0, singular="inf")
    b2 = b.copy()
    b2[off[0]] = 1
    a2 = a.copy()
    a2[off[-1]] = 1
    assert crlb_trace(g, a, b2, 1.0, singular="inf") <= base * (1 + 1e-12)
    assert crlb_trace(g, a2, b, 1.0, singular="inf") <= base * (1 + 1e-12)


@given(st.integers(0, 2**31 - 1), st.floats(1e-3, 1e3))
def test_power_scale_law(seed, t):
    rng = np.random.default_rng(seed)
    g = geometry_matrices(build_scenario(ScenarioConfig(n_aps=6, seed=seed)))
    a = np.array([1, 1, 0, 0, 0, 0.0])
    b = np.array([0, 0, 1, 1, 0, 0.0])
    ps = float(rng.uniform(0.1, 10))
    assert crlb_trace(g, a, b, ps * t) == pytest.approx(crlb_trace(g, a, b, ps) / t, rel=1e-13)


def test_mode_overlap_rejected():
    g = geometry_matrices(cross_scenario())
    with pytest.raises(ValueError):
        crlb_trace(g, np.array([1, 0, 0, 0.0]), np.array([1, 0, 1, 0.0]), 1.0)


@pytest.mark.parametrize("fixed", ["a", "b"])
def test_linear_form_matches_cross_multiplication(fixed):
    rng = np.random.default_rng(4)
    L = 7
    g = geometry_matrices(build_scenario(ScenarioConfig(n_aps=L, seed=4)))
    for _ in range(50):
        a, b = random_modes(rng, L)
        eta = float(10 ** rng.uniform(-12, -6))
        rows = linear_sensing_constraint(g, eta, 1.0, **({"b": b} if fixed == "b" else {"a": a}))
        X = np.outer(a, a) if fixed == "b" else np.outer(b, b)
        num = a @ (g.g_a + g.g_b) @ b
        den = (a @ g.g_a @ b) * (a @ g.g_b @ b) - (a @ g.g_c @ b) ** 2
        assert rows.residual(X) == pytest.approx(num - eta * den, rel=1e-9, abs=1e-12 * abs(num))
        assert rows.denominator(X) == pytest.approx(den, rel=1e-9, abs=1e-12 * abs(den) + 1e-300)
        c = crlb_trace(g, a, b, 1.0, singular="inf")
        if np.isfinite(c) and abs(c - eta) > 1e-9 * eta:
            assert rows.satisfied(X) == (c <= eta)


def test_huge_eta_accepts_any_nonsingular_choice():
    g = geometry_matrices(cross_scenario())
    b = np.array([0, 0, 1, 1.0])
    rows = linear_sensing_constraint(g, 1e30, 1.0, b=b)
    assert rows.satisfied(np.outer([1, 1, 0, 0.0], [1, 1, 0, 0.0]))
    assert not rows.satisfied(np.zeros((4, 4)))


def test_gmatrices_snapshot():
    g = geometry_matrices(build_scenario(ScenarioConfig(seed=2)))
    back = GMatrices.from_json(g.to_json())
    assert np.array_equal(back.g_c, g.g_c) and back.xi == g.xi


def test_eps_det_value():
    assert EPS_DET == 1e-30
