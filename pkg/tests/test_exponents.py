import math

import numpy as np
import pytest
import sympy as sp

from transportlab import PotentialSpec, WavePacket
from transportlab import exponents as ex

T6 = ex.geometric_grid(10, 100, 6)


def test_fit_exact_power_law():
    for beta, p in [(0.5, 2), (0.8, 1), (1.0, 4)]:
        fit = ex.fit_exponent(T6, 3.0 * T6 ** (p * beta), p)
        assert fit.slope == pytest.approx(beta, abs=1e-12)
        assert fit.beta_minus == pytest.approx(beta, abs=1e-12)
        assert fit.beta_plus == pytest.approx(beta, abs=1e-12)


def test_fit_window_ordering():
    rng = np.random.default_rng(1)
    M = T6**1.4 * np.exp(rng.normal(0, 0.1, T6.size))
    fit = ex.fit_exponent(T6, M, 2)
    assert fit.beta_minus <= fit.slope <= fit.beta_plus
    assert fit.window == (2, 5)


def test_grid_checks():
    with pytest.raises(ValueError):
        ex.fit_exponent(T6[:5], T6[:5], 2)
    with pytest.raises(ValueError):
        ex.fit_exponent(np.linspace(10, 100, 6), T6, 2)
    with pytest.raises(ValueError):
        ex.fit_exponent(T6, -T6, 2)


def test_s_alpha_synthetic():
    fit = ex.s_alpha_from_P(T6, T6**-3.0, 0.5)
    assert fit.S_minus == pytest.approx(3.0) and fit.S_plus == pytest.approx(3.0)
    floored = ex.s_alpha_from_P(T6, np.zeros(6), 0.5)
    assert floored.floored.all()
    assert floored.S_plus == pytest.approx(-math.log(ex.P_FLOOR) / math.log(100))


def test_combine():
    a = WavePacket.delta(0)
    b = WavePacket.delta(3)
    c = ex.combine(1.0, a, 2j, b)
    assert c.support == (0, 3) and c(3) == 2j and c(0) == 1


def test_free_ballistic_fit():
    spec = PotentialSpec.free()
    fit = ex.beta_fit(spec, WavePacket.delta(0), 2, ex.geometric_grid(4, 16, 6), method="time-quadrature")
    assert 0.95 <= fit.slope <= 1.01
    assert len(fit.meta["L"]) == 6


def test_sublinearity_small():
    spec = PotentialSpec.fibonacci(1.0)
    rep = ex.sublinearity_check(spec, WavePacket.delta(0), WavePacket.delta(3), 1 / math.sqrt(2),
                                1 / math.sqrt(2), 2, ex.geometric_grid(3, 12, 6),
                                method="time-quadrature", n_times=5)
    assert rep.pointwise_holds
    assert set(rep.beta_plus) == {"psi1", "psi2", "psi"}


def test_premise_scan_closed_form():
    # constant max norm c: integrand c^-2 over [-K, K], so value = T^m 2K / c^2
    spec = PotentialSpec.free()
    c = 4.0
    scan = ex.upper_bound_premise_scan(spec, 0.3, 2.0, 10.0, [10.0, 20.0], max_norm=lambda b, z, om: c)
    K = spec.bound + 3.0
    assert scan.K == K
    assert np.allclose(scan.uniform, np.array([10.0, 20.0]) ** 2 * 2 * K / c**2, rtol=1e-12)
    assert scan.ratio(20.0, 10.0) == pytest.approx(4.0)


def test_premise_scan_free_grows():
    scan = ex.upper_bound_premise_scan(PotentialSpec.free(), 0.2, 2, 10, [25.0, 100.0])
    assert scan.uniform[1] > scan.uniform[0]
    with pytest.raises(ValueError):
        ex.upper_bound_premise_scan(PotentialSpec.free(), 1.0, 2, 10, [25.0])


def test_corollary_symbolic():
    a, p = sp.symbols("alpha p", positive=True)
    assert sp.simplify(ex.corollary_exponent(sp.Integer(0), p) - (1 - 1 / p)) == 0
    assert sp.simplify(ex.corollary_exponent(sp.Integer(1), p) - (sp.Rational(1, 2) - sp.Rational(5, 2) / p)) == 0
    assert sp.simplify(ex.moment_bound_exponent(sp.Integer(0), p) - p) == 0
    assert ex.corollary_exponent(0.0, 2.0) == pytest.approx(0.5)


def test_inner_product_profile():
    spec = PotentialSpec.fibonacci(1.0)
    psi = WavePacket(0, [1.0, 0.5, -0.25, 0.1])
    E = np.linspace(-3, 3, 601)
    prof = ex.inner_product_profile(spec, psi, E, eps0=0.05)
    assert prof.polynomial_degree == 2
    assert prof.interval_count_ok
    assert np.all(prof.best >= prof.seed_values.max(axis=0) - 1e-15)
    # with seed (1, 0) at the left edge the first coefficient drops out; v(1)=1 so <psi, v> = 0.5 + ...
    direct = []
    for e in E[:3]:
        v = [0.0, 1.0]
        for n in range(1, 3):
            v.append((e - spec(n)) * v[-1] - v[-2])
        direct.append(abs(np.dot(psi.coefficients, v)))
    V0 = 1.0                       # V(0) = (v(1), v(0)) = (1, 0)
    assert np.allclose(prof.seed_values[0, :3], np.array(direct) / V0)


def test_fattened_measure():
    assert ex.fattened_measure([(0.0, 1.0)], 10) == pytest.approx(1.2)
    assert ex.fattened_measure([(0.0, 0.0), (0.1, 0.1)], 10) == pytest.approx(0.3)
    assert ex.fattened_measure([(0.0, 0.0), (1.0, 1.0)], 10) == pytest.approx(0.4)


def test_dimer_certificate():
    spec = PotentialSpec.dimer(0.5, seed=1)
    psi = WavePacket(0, [1.0, 0.4])
    cert = ex.lower_bound_certificate(spec, psi, [(0.499, 0.501)], 0.0, 10.0, 100.0)
    assert cert.verdict and cert.witness is None
    assert cert.to_dict()["verdict"] == "pass"
    assert cert.moment_exponent == 2.0
    assert cert.B_measure == pytest.approx(0.022)


def test_certificate_fails_in_localised_regime():
    spec = PotentialSpec.almost_mathieu(5.0)
    cert = ex.lower_bound_certificate(spec, WavePacket.delta(0), [(0.0, 0.1)], 0.0, 5.0, 200.0, per_interval=8)
    assert not cert.verdict and cert.witness is not None
    assert any(r["refined"] for r in cert.log)


def test_certificate_point_set_exponent():
    spec = PotentialSpec.dimer(0.5, seed=1)
    cert = ex.lower_bound_certificate(spec, WavePacket(0, [1.0, 0.4]), [(0.5, 0.5)], 0.0, 10.0, 50.0)
    assert cert.point_exponent == pytest.approx(0.5)
    with pytest.raises(ValueError):
        ex.lower_bound_certificate(spec, WavePacket.delta(0), [(1.0, 0.0)], 0.0, 10.0, 50.0)


def test_beta_monotone_in_p():
    fits = ex.beta_fits(PotentialSpec.fibonacci(1.0), WavePacket.delta(0), [1, 4], ex.geometric_grid(5, 40, 6))
    assert fits[4].slope >= fits[1].slope - 0.05


def test_premise_scan_exponential_family():
    # max norm exp(c b) at b = C T^alpha / 2 gives T^m 2K exp(-c C T^alpha)
    spec = PotentialSpec.free()
    c, alpha, m, C = 0.3, 0.2, 2.0, 2.0
    T = np.array([25.0, 100.0, 400.0])
    scan = ex.upper_bound_premise_scan(spec, alpha, m, C, T, omegas=[0.0],
                                       max_norm=lambda b, z, om: math.exp(c * b))
    want = T**m * 2 * scan.K * np.exp(-c * C * T**alpha)
    assert np.allclose(scan.uniform, want, rtol=1e-10, atol=0)


def test_s_alpha_fit_runs_on_profiles():
    T = ex.geometric_grid(5, 40, 6)
    fit = ex.s_alpha_fit(PotentialSpec.fibonacci(1.0), WavePacket.delta(0), 0.5, T)
    assert fit.S_plus <= fit.S_minus
    with pytest.raises(ValueError):
        ex.s_alpha_fit(PotentialSpec.fibonacci(1.0), WavePacket.delta(0), 0.0, T)


def test_inner_product_single_site():
    spec = PotentialSpec.fibonacci(1.0)
    E = np.linspace(-2, 2, 41)
    prof = ex.inner_product_profile(spec, WavePacket.delta(0), E)
    # seed (1, 0) at the left edge 0: v(1) = 1, v(0) = 0, so <delta_0, v> = 0; seed (0, 1) gives 1
    assert np.allclose(prof.seed_values[0], 0.0)
    assert np.allclose(prof.best, 1.0)


def test_two_site_profile_bounded_away_from_zero():
    rng = np.random.default_rng(4)
    spec = PotentialSpec.dimer(0.5, seed=0)
    E = np.linspace(0.0, 1.0, 201)
    for _ in range(5):
        psi = WavePacket(0, rng.normal(size=2))
        assert ex.inner_product_profile(spec, psi, E).best.min() > 1e-3


def test_random_state_interval_count_bounded_by_degree():
    rng = np.random.default_rng(0)
    E = np.linspace(-3, 3, 3001)
    for _ in range(6):
        psi = WavePacket(-3, rng.normal(size=7))
        base = ex.inner_product_profile(PotentialSpec.free(), psi, E)
        eps0 = 0.05 * base.seed_values[0].max()
        prof = ex.inner_product_profile(PotentialSpec.free(), psi, E, eps0=eps0)
        assert prof.polynomial_degree == 5
        assert prof.interval_count_ok
