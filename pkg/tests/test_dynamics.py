import math

import numpy as np
import pytest
from scipy.special import jv

from transportlab import PotentialSpec, WavePacket
from transportlab import dynamics as dyn

FIB = PotentialSpec.fibonacci(1.0)


def test_free_evolution_bessel():
    L, t = 200, 3.0
    out = dyn.evolve_dense(WavePacket.delta(0), PotentialSpec.free(), [t], L)[0]
    n = np.arange(-L, L + 1)
    want = (-1j) ** np.abs(n) * jv(np.abs(n), 2 * t)
    assert np.abs(out - want).max() <= 1e-12


def test_evolution_unitary_and_constant_shift():
    psi = WavePacket(-2, [1, 2j, 0.5, -1, 0.3])
    out = dyn.evolve_dense(psi, FIB, [0.0, 1.0, 7.5], 80)
    assert np.allclose(out[0], psi.dense(80))
    assert np.allclose((np.abs(out) ** 2).sum(axis=1), psi.norm2, rtol=1e-12)
    # a constant potential only adds a global phase
    c = 0.7
    a = dyn.evolve_dense(psi, PotentialSpec.free(), [2.0], 60)[0]
    b = dyn.evolve_dense(psi, PotentialSpec("constant", constant=c), [2.0], 60)[0]
    assert np.allclose(b, np.exp(-1j * c * 2.0) * a)


def test_evolve_wavepacket_wrapper():
    w = dyn.evolve(WavePacket.delta(0), FIB, 1.0, 40)
    assert w.norm2 == pytest.approx(1.0, rel=1e-12)


@pytest.fixture(scope="module")
def three_routes():
    psi = WavePacket.delta(0)
    T, L = 5.0, 120
    return [f(psi, FIB, T, L) for f in (dyn.time_average_resolvent,
                                          dyn.time_average_quadrature,
                                          dyn.time_average_eigen_exact)]


def test_routes_agree(three_routes):
    r, q, e = three_routes
    assert abs(r.total - 1) <= 1e-4
    assert abs(q.total - 1) <= 1e-6
    assert abs(e.total - 1) <= 1e-10
    for a, b in [(r, q), (r, e), (q, e)]:
        assert np.abs(a.values - b.values).sum() <= 1e-3
    assert r.leakage < 1e-12 and r.meta["tail_bound"] > 0


def test_two_level_closed_form():
    # L = 1 box with W = 0: eigen-exact time average of delta_0 against the analytic formula
    T = 3.0
    prof = dyn.time_average_eigen_exact(WavePacket.delta(0), PotentialSpec.free(), T, 1)
    # H has eigenvalues 0, +-sqrt 2; the E = 0 eigenvector vanishes at the centre
    lor = lambda d: 1 / (1 + (T * d / 2) ** 2)
    c2 = {math.sqrt(2): 0.5, -math.sqrt(2): 0.5}
    want = sum(a * b * lor(x - y) for x, a in c2.items() for y, b in c2.items())
    assert prof(0) == pytest.approx(want, rel=1e-12)


def test_resolvent_grid_checks():
    psi = WavePacket.delta(0)
    with pytest.raises(ValueError):
        dyn.time_average_resolvent(psi, FIB, 10.0, 30, energies=np.linspace(-6, 6, 11))
    with pytest.raises(ValueError):
        dyn.time_average_resolvent(psi, FIB, 10.0, 30, energies=np.linspace(-1, 1, 2001))
    with pytest.raises(ValueError):
        dyn.time_average_eigen_exact(psi, FIB, 10.0, 400)


def test_averaging_box_rule():
    psi = WavePacket(-3, np.ones(7))
    L = dyn.averaging_box(FIB, psi, 10.0, tol=1e-6, margin=16)
    assert L == 3 + 16 + math.ceil(10 * math.log(1e6))
    assert dyn.averaging_box(FIB, psi, 10.0, L_max=50) == 50


def test_outside_probability_and_moments():
    vals = np.array([0.1, 0.2, 0.4, 0.2, 0.1])
    prof = dyn.TimeAverageProfile(1.0, 2, vals, "test", 0.0, 0.0, 1.0, {})
    P0 = dyn.outside_probability(prof, 0)
    assert P0.P == pytest.approx(1.4)          # site 0 counted on both sides
    P1 = dyn.outside_probability(prof, 0.5)     # rounds up to 1
    assert (P1.P_l, P1.P_r) == pytest.approx((0.3, 0.3))
    assert dyn.moment(prof, 2) == pytest.approx(2 * 0.2 + 2 * 0.4)
    with pytest.raises(ValueError):
        dyn.outside_probability(prof, 3)
    with pytest.raises(ValueError):
        dyn.moment(prof, 0)


def test_moment_table_series():
    vals = np.zeros(11)
    vals[5] = 0.5
    vals[8] = 0.5
    prof = dyn.TimeAverageProfile(2.0, 5, vals, "test", 0.0, 1e-9, 1.0, {})
    t = dyn.MomentTable()
    e = t.add(prof, 2)
    assert e.value == pytest.approx(4.5)
    T, M = t.series(2)
    assert T.tolist() == [2.0] and M.tolist() == [4.5]


def test_free_moment_scaling():
    # free delta_0: <|X|^2>(t) = 2 t^2, so the average is T^2 on the infinite lattice
    T = 8.0
    L = dyn.averaging_box(PotentialSpec.free(), WavePacket.delta(0), T, tol=1e-12)
    prof = dyn.time_average_quadrature(WavePacket.delta(0), PotentialSpec.free(), T, L)
    assert dyn.moment(prof, 2) == pytest.approx(T**2, rel=1e-6)


def test_parity_for_even_potential():
    spec = PotentialSpec.almost_mathieu(1.5)          # cos(2 pi theta n) is even at phase 0
    n = np.arange(-50, 51)
    assert np.allclose(spec.values(n), spec.values(-n), rtol=0, atol=1e-12)
    prof = dyn.time_average_resolvent(WavePacket(-1, [0.5, 1.0, 0.5]), spec, 6.0, 90)
    assert np.abs(prof.values - prof.values[::-1]).max() <= 1e-9


def test_monotone_light_cone():
    prof = dyn.time_average_resolvent(WavePacket.delta(0), FIB, 8.0, 100)
    P = [dyn.outside_probability(prof, N).P for N in range(1, 100)]
    assert np.all(np.diff(P) <= prof.error_bar)


def test_free_light_cone_tail():
    T = 10.0
    t_max = T / 2 * math.log(1e10)
    N = int(2 * t_max)
    prof = dyn.time_average_quadrature(WavePacket.delta(0), PotentialSpec.free(), T, N + 20)
    assert dyn.outside_probability(prof, N).P < 1e-6
