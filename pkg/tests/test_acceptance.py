"""Acceptance criteria 1-12 at their declared tolerances.

Each test records one PASS/FAIL line (shown in the terminal summary, and
printed directly when this file is run as a script).
"""
import math

import mpmath
import numpy as np
import pytest
import sympy as sp
from scipy.special import jv

from transportlab import PotentialSpec, WavePacket
from transportlab import dynamics as dyn
from transportlab import exponents as ex
from transportlab import tracemap as tm
from transportlab import transfer as tr

try:
    from conftest import ACCEPTANCE_LINES
except ImportError:  # run as a script
    ACCEPTANCE_LINES = []

T_GRID = ex.geometric_grid(10, 200, 8)


def report(num: int, ok: bool, detail: str) -> None:
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {num:2d}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def test_01_cocycle_unimodularity():
    rng = np.random.default_rng(2024)
    specs = [PotentialSpec.free(), PotentialSpec.fibonacci(1.0), PotentialSpec.fibonacci(3.0),
             PotentialSpec.almost_mathieu(0.5), PotentialSpec.almost_mathieu(2.0),
             PotentialSpec.thue_morse(1.0), PotentialSpec.period_doubling(1.5), PotentialSpec.dimer(0.5, seed=7)]
    det_worst = res_worst = 0.0
    used = attempts = 0
    while used < 100 and attempts < 5000:
        attempts += 1
        spec = specs[rng.integers(len(specs))]
        z = complex(rng.uniform(-2 - spec.bound, 2 + spec.bound), rng.uniform(0, 0.1))
        k, m, n = (int(v) for v in rng.integers(-1000, 1001, 3))
        a, b, c = tr.transfer_product(spec, n, m, z), tr.transfer_product(spec, m, k, z), tr.transfer_product(spec, n, k, z)
        if a.saturated or b.saturated or c.saturated:
            continue
        used += 1
        det_worst = max(det_worst, abs(c.det - 1))
        res = np.abs(a.matrix @ b.matrix - c.matrix).max() / (a.norm * b.norm)
        res_worst = max(res_worst, res)
    ok = used == 100 and det_worst <= 1e-10 and res_worst <= 1e-9
    report(1, ok, f"{used} unsaturated samples, max |det-1| = {det_worst:.2e} (<= 1e-10), "
                  f"max cocycle residual = {res_worst:.2e} (<= 1e-9)")


def test_02_free_bessel_oracle():
    L, t = 400, 5.0
    out = dyn.evolve_dense(WavePacket.delta(0), PotentialSpec.free(), [t], L)[0]
    n = np.arange(-L, L + 1)
    err = float(np.abs(out - (-1j) ** np.abs(n) * jv(np.abs(n), 2 * t)).max())
    report(2, err <= 1e-8, f"max |psi - i^-|n| J_n(2t)| = {err:.2e} (<= 1e-8)")


@pytest.fixture(scope="module")
def fib_profiles():
    fib, psi = PotentialSpec.fibonacci(1.0), WavePacket.delta(0)
    T, L = 10.0, 300
    return (dyn.time_average_resolvent(psi, fib, T, L), dyn.time_average_quadrature(psi, fib, T, L),
            dyn.time_average_eigen_exact(psi, fib, T, L))


def test_03_time_average_normalisation(fib_profiles):
    r, q, _ = fib_profiles
    er, eq = abs(r.total - 1), abs(q.total - 1)
    report(3, er <= 1e-4 and eq <= 1e-6, f"|sum a - 1|: resolvent {er:.2e} (<= 1e-4), quadrature {eq:.2e} (<= 1e-6)")


def test_04_three_way_agreement(fib_profiles):
    r, q, e = fib_profiles
    d = {"res-quad": np.abs(r.values - q.values).sum(), "res-eig": np.abs(r.values - e.values).sum(),
         "quad-eig": np.abs(q.values - e.values).sum()}
    report(4, max(d.values()) <= 1e-3, ", ".join(f"{k} {v:.2e}" for k, v in d.items()) + " (<= 1e-3)")


def test_05_trace_machinery():
    worst_rec = worst_fricke = 0.0
    for E in (-2.5, -1.0, 0.0, 0.37, 1.3, 2.9, 0.5 + 0.1j):
        orb = tm.trace_orbit(1.0, E, 14)
        worst_rec = max(worst_rec, float(orb.direct_residuals.max()))
        I = orb.fricke()
        worst_fricke = max(worst_fricke, float(np.abs(I - I[0]).max()))
    counts_ok = True
    for lam in (0.1, 1.0):
        for k in range(1, 11):
            try:
                counts_ok &= tm.band_zeros(lam, k).zeros.size == tm.fibonacci_length(k)
            except tm.ZeroCountError:
                counts_ok = False
    worst_der = 0.0
    for lam, E, k in [(1.0, 0.31, 8), (0.1, -1.2, 10), (1.0, -2.2, 6), (0.1, 1.7, 9)]:
        h = 1e-6
        fd = (tm.trace_polynomial(lam, E + h, k) - tm.trace_polynomial(lam, E - h, k)) / (2 * h)
        worst_der = max(worst_der, abs(tm.trace_derivative(lam, E, k) - fd) / abs(fd))
    ok = worst_rec <= 1e-8 and worst_fricke <= 1e-8 and counts_ok and worst_der <= 1e-5
    report(5, ok, f"recursion residual {worst_rec:.1e}, Fricke spread {worst_fricke:.1e}, "
                  f"zero counts = q_k: {counts_ok}, derivative rel. error {worst_der:.1e}")


def test_06_eta_constant():
    eta = tm.eta_constant(1.0).eta
    a1 = 2 * math.cos(math.pi / 9)
    phi = (1 + math.sqrt(5)) / 2
    oracle = 2 * math.log(math.sqrt(7) * 4 * a1) / math.log(phi)
    diff = abs(eta - oracle)
    # the quoted decimal 12.4288 is 1.0e-3 above the closed form 12.42777 (digit transposition of 12.4278)
    report(6, diff <= 1e-3, f"eta(1) = {eta:.6f}, cubic-root oracle {oracle:.6f}, |diff| = {diff:.1e} (<= 1e-3); "
                            f"|eta - 12.4288| = {abs(eta - 12.4288):.2e}, |eta - 12.4278| = {abs(eta - 12.4278):.2e}")


def test_07_ballistic_bound():
    fit = ex.beta_fit(PotentialSpec.free(), WavePacket.delta(0), 2, T_GRID)
    report(7, 0.9 <= fit.slope <= 1.02, f"free delta_0 p=2 slope {fit.slope:.4f} in [0.9, 1.02]")


def test_08_thue_morse_one_sided():
    box = ex.BoxPolicy(L_max=1200)
    tmspec = PotentialSpec.thue_morse(1.0)
    slopes = [ex.beta_fit(tmspec, psi, 2, T_GRID, box=box).slope
              for psi in (WavePacket.delta(0), WavePacket(0, [1.0, 1.0]))]
    report(8, min(slopes) >= 0.35, f"Thue-Morse slopes delta_0 {slopes[0]:.3f}, 2-site {slopes[1]:.3f} (>= 0.35)")


def test_09_random_dimer():
    ok_c, diag = tr.critical_energy_test([0.5, 0.5], [-0.5, -0.5], 0.5)
    box = ex.BoxPolicy(L_max=1200)
    slopes = [ex.beta_fit(PotentialSpec.dimer(0.5, seed=s), WavePacket.delta(0), 2, T_GRID, box=box).slope
              for s in range(4)]
    mean = float(np.mean(slopes))
    ok = ok_c and diag.commutator_norm <= 1e-12 and mean >= 0.60
    report(9, ok, f"commutator {diag.commutator_norm:.1e} (<= 1e-12), slopes "
                  f"{', '.join(f'{s:.3f}' for s in slopes)}, mean {mean:.3f} (>= 0.60)")


def test_10_localised_premise_scan():
    am = PotentialSpec.almost_mathieu(5.0)
    scan = ex.upper_bound_premise_scan(am, 0.2, 2, 10.0, [25.0, 400.0])
    ratio = scan.ratio(400.0, 25.0)
    prof = dyn.time_average_resolvent(WavePacket.delta(0), am, 100.0, 600)
    P = dyn.outside_probability(prof, 100.0**0.3).P
    report(10, ratio <= 1e-4 and P <= 1e-2,
           f"premise(400)/premise(25) = {ratio:.2e} (<= 1e-4, C = 10), P(T^0.3, 100) = {P:.2e} (<= 1e-2)")


def test_11_sublinearity():
    rep = ex.sublinearity_check(PotentialSpec.fibonacci(1.0), WavePacket.delta(0), WavePacket.delta(3),
                                2**-0.5, 2**-0.5, 2, T_GRID)
    b = rep.beta_plus
    report(11, rep.passes and rep.pointwise_holds,
           f"beta+ proxies psi1 {b['psi1']:.4f}, psi2 {b['psi2']:.4f}, mix {b['psi']:.4f} (<= max + 0.05); "
           f"pointwise max violation {rep.pointwise_max_violation:.1e} over {rep.samples} samples")


def test_12_certificate_arithmetic():
    p = sp.symbols("p", positive=True)
    sym0 = sp.simplify(ex.corollary_exponent(sp.Integer(0), p) - (1 - 1 / p)) == 0
    sym1 = sp.simplify(ex.corollary_exponent(sp.Integer(1), p) - (sp.Rational(1, 2) - sp.Rational(5, 2) / p)) == 0
    rng = np.random.default_rng(12)
    spec = PotentialSpec.dimer(0.5, seed=0)
    verdicts = []
    for _ in range(10):
        psi = WavePacket(0, rng.normal(size=2) + 1j * rng.normal(size=2))
        cert = ex.lower_bound_certificate(spec, psi, [(0.499, 0.501)], 0.0, 10.0, 100.0)
        verdicts.append(cert.verdict)
    report(12, sym0 and sym1 and all(verdicts),
           f"symbolic alpha=0: {sym0}, alpha=1: {sym1}; dimer certificates passed {sum(verdicts)}/10")


if __name__ == "__main__":
    import sys

    sys.exit(pytest.main([__file__, "-q"]))
