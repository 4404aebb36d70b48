"""Finite-scale transport exponents and the two transfer-matrix criteria.

Everything here is a finite-T surrogate: liminf/limsup become min/max of
local slopes over the upper half of a geometric T grid, "for every m" becomes
a finite list of m, and infima over continua become sampled minima.
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import dynamics as dyn
from .lattice import PotentialSpec, WavePacket
from .transfer import max_log_norms, norm_scan

P_FLOOR = 1e-14


def geometric_grid(start: float, stop: float, count: int) -> np.ndarray:
    return np.geomspace(start, stop, count)


def _check_grid(T_grid) -> np.ndarray:
    T = np.asarray(T_grid, dtype=float)
    if T.size < 6:
        raise ValueError("T grid needs at least 6 points")
    if np.any(T <= 0) or np.any(np.diff(T) <= 0):
        raise ValueError("T grid must be positive and increasing")
    r = np.log(T[1:] / T[:-1])
    if not np.allclose(r, r[0], rtol=1e-8, atol=0):
        raise ValueError("T grid must be geometric")
    return T


def _upper_half(n: int) -> slice:
    return slice((n - 1) // 2, n)


@dataclass(frozen=True, eq=False)
class ExponentFit:
    """Slopes of log<|X|^p>/p against log T.

    `slope` is the least-squares slope over the upper half of the grid, the
    same window the local two-point slopes run over, so
    beta_minus <= slope <= beta_plus always holds.  `slope_all` fits the
    whole grid.
    """

    p: float
    T: np.ndarray
    moments: np.ndarray
    slope: float
    slope_all: float
    beta_minus: float
    beta_plus: float
    residual: float
    window: tuple[int, int]
    meta: dict = field(default_factory=dict)


def fit_exponent(T_grid, moments, p: float) -> ExponentFit:
    T = _check_grid(T_grid)
    M = np.asarray(moments, dtype=float)
    if M.shape != T.shape or np.any(~(M > 0)):
        raise ValueError("need one positive moment per grid point")
    x, y = np.log(T), np.log(M) / p
    w = _upper_half(T.size)
    coef, res, *_ = np.polyfit(x[w], y[w], 1, full=True)
    local = np.diff(y[w]) / np.diff(x[w])
    slope_all = np.polyfit(x, y, 1)[0]
    resid = float(math.sqrt(res[0])) if res.size else 0.0
    return ExponentFit(p, T, M, float(coef[0]), float(slope_all), float(local.min()),
                       float(local.max()), resid, (w.start, T.size - 1))


@dataclass(frozen=True)
class BoxPolicy:
    tol: float = 1e-6
    margin: int = 16
    L_max: int | None = None
    L: int | None = None        # fixed half-width, overrides the rule

    def half_width(self, spec: PotentialSpec, psi: WavePacket, T: float) -> int:
        if self.L is not None:
            return self.L
        return dyn.averaging_box(spec, psi, T, self.tol, self.margin, self.L_max)


def compute_profiles(spec, psi, T_grid, method: str = "resolvent", box: BoxPolicy = BoxPolicy()):
    if method not in dyn.METHODS:
        raise ValueError(f"unknown method {method!r}")
    f = dyn.METHODS[method]
    return [f(psi, spec, float(T), box.half_width(spec, psi, float(T))) for T in T_grid]


def beta_fits(spec, psi, ps: Sequence[float], T_grid, method="resolvent", box=BoxPolicy(), profiles=None):
    """ExponentFit per p, all from one set of profiles."""
    T = _check_grid(T_grid)
    if profiles is None:
        profiles = compute_profiles(spec, psi, T, method, box)
    out = {}
    for p in ps:
        table = dyn.MomentTable()
        for prof in profiles:
            table.add(prof, p)
        fit = fit_exponent(T, [e.value for e in table.entries], p)
        out[p] = dataclasses.replace(fit, meta={
            "method": method,
            "L": [prof.L for prof in profiles],
            "err_bar": [e.err_bar for e in table.entries],
            "leakage": [prof.leakage for prof in profiles],
        })
    return out


def beta_fit(spec, psi, p: float, T_grid, method="resolvent", box=BoxPolicy(), profiles=None) -> ExponentFit:
    return beta_fits(spec, psi, [p], T_grid, method, box, profiles)[p]


@dataclass(frozen=True, eq=False)
class SAlphaFit:
    alpha: float
    T: np.ndarray
    P: np.ndarray
    S_minus: float
    S_plus: float
    floored: np.ndarray


def s_alpha_from_P(T_grid, P, alpha: float) -> SAlphaFit:
    T = _check_grid(T_grid)
    P = np.asarray(P, dtype=float)
    floored = P < P_FLOOR
    Pf = np.where(floored, P_FLOOR, P)
    r = np.log(Pf) / np.log(T)
    w = _upper_half(T.size)
    return SAlphaFit(alpha, T, Pf, float(-r[w].min()), float(-r[w].max()), floored)


def s_alpha_fit(spec, psi, alpha: float, T_grid, method="resolvent", box=BoxPolicy(), profiles=None) -> SAlphaFit:
    """(S^- proxy, S^+ proxy) = (-min, -max) of log P(T^alpha, T)/log T over the upper half."""
    if not 0 < alpha <= 1:
        raise ValueError("alpha must lie in (0, 1]")
    T = _check_grid(T_grid)
    if profiles is None:
        profiles = compute_profiles(spec, psi, T, method, box)
    P = [dyn.outside_probability(prof, math.ceil(t**alpha)).P for prof, t in zip(profiles, T)]
    return s_alpha_from_P(T, P, alpha)


def combine(x: complex, psi1: WavePacket, y: complex, psi2: WavePacket) -> WavePacket:
    """x psi1 + y psi2 (either weight may vanish)."""
    lo = min(psi1.offset, psi2.offset)
    hi = max(psi1.offset + psi1.coefficients.size, psi2.offset + psi2.coefficients.size)
    c = np.zeros(hi - lo, dtype=complex)
    c[psi1.offset - lo : psi1.offset - lo + psi1.coefficients.size] += x * psi1.coefficients
    c[psi2.offset - lo : psi2.offset - lo + psi2.coefficients.size] += y * psi2.coefficients
    return WavePacket(lo, c)


@dataclass(frozen=True, eq=False)
class SublinearityReport:
    beta_plus: dict
    slack: float
    passes: bool
    pointwise_max_violation: float
    pointwise_holds: bool
    samples: int


def sublinearity_check(
    spec, psi1: WavePacket, psi2: WavePacket, x: complex, y: complex, p: float, T_grid,
    slack: float = 0.05, method="resolvent", box=BoxPolicy(), n_times: int = 12,
) -> SublinearityReport:
    """beta^+ proxy of x psi1 + y psi2 against those of psi1 and psi2.

    The pointwise form checked on sampled (t, n) is
    |psi(t,n)|^2 <= 2x^2 |psi1(t,n)|^2 + 2y^2 |psi2(t,n)|^2.
    """
    psi = combine(x, psi1, y, psi2)
    T = _check_grid(T_grid)
    proxies = {}
    for name, st in (("psi1", psi1), ("psi2", psi2), ("psi", psi)):
        proxies[name] = beta_fit(spec, st, p, T, method, box).beta_plus
    passes = proxies["psi"] <= max(proxies["psi1"], proxies["psi2"]) + slack

    L = max(box.half_width(spec, s, float(T[-1])) for s in (psi1, psi2, psi))
    times = np.linspace(0.0, float(T[-1]), n_times)
    a = np.abs(dyn.evolve_dense(psi, spec, times, L)) ** 2
    a1 = np.abs(dyn.evolve_dense(psi1, spec, times, L)) ** 2
    a2 = np.abs(dyn.evolve_dense(psi2, spec, times, L)) ** 2
    rhs = 2 * abs(x) ** 2 * a1 + 2 * abs(y) ** 2 * a2
    viol = float(np.max(a - rhs))
    return SublinearityReport(proxies, slack, bool(passes), viol, viol <= 1e-12, int(a.size))


# --- upper-bound premise ---------------------------------------------------

def _dynamic(spec: PotentialSpec) -> bool:
    return spec.kind in ("sturmian", "quasiperiodic")


def _trapezoid_weights(E: np.ndarray) -> np.ndarray:
    h = np.diff(E)
    w = np.zeros(E.size)
    w[:-1] += h / 2
    w[1:] += h / 2
    return w


@dataclass(frozen=True, eq=False)
class PremiseScan:
    alpha: float
    m: float
    C: float
    K: float
    T: np.ndarray
    omegas: np.ndarray
    values: np.ndarray          # (len(T), len(omegas)) for the one-sided form; (len(T), 1) two-sided
    underflow: np.ndarray       # nodes whose integrand fell below the double range, per entry
    mode: str

    @property
    def uniform(self) -> np.ndarray:
        """max over omega per T."""
        return self.values.max(axis=1)

    def ratio(self, T_hi: float, T_lo: float) -> float:
        i, j = int(np.argmin(abs(self.T - T_hi))), int(np.argmin(abs(self.T - T_lo)))
        return float(self.uniform[i] / self.uniform[j])


def upper_bound_premise_scan(
    spec: PotentialSpec,
    alpha: float,
    m: float,
    C: float,
    T_grid,
    omegas: Sequence[float] | None = None,
    two_sided: bool = False,
    K: float | None = None,
    max_norm: Callable[[float, complex, float], float] | None = None,
    anchor_stride: int = 1,
) -> PremiseScan:
    """T^m int_{-K}^{K} (max_{0<=n<=C T^alpha/2} ||M(n,0,E+i/T,omega)||)^-2 dE per T and omega.

    The integral is a trapezoid sum with spacing <= 1/(4T).  Norms are kept
    in log form, so the only floor is double underflow of the integrand,
    which is counted.  With `two_sided` the anchored forms are evaluated
    instead: for every anchor |k| < C T^alpha/2 the integrals of
    (max_{k<=n<=C T^alpha} ||M(n,k)||)^-2 and (max_{-C T^alpha<=n<=k} ||M(n,k)||)^-2,
    and the largest is reported.  `max_norm(bound, z, omega)` replaces the
    one-sided transfer-matrix maximum.
    """
    if not 0 < alpha < 1 or m <= 1 or C <= 0:
        raise ValueError("need 0 < alpha < 1, m > 1, C > 0")
    T = np.asarray(T_grid, dtype=float)
    if T.size == 0 or np.any(T <= 0):
        raise ValueError("T grid must be non-empty and positive")
    K = spec.bound + 3.0 if K is None else float(K)
    if omegas is None:
        omegas = np.arange(32) / 32 if _dynamic(spec) else np.array([spec.phase])
    omegas = np.asarray(list(omegas), dtype=float)
    if two_sided:
        omegas = np.array([spec.phase])

    values = np.zeros((T.size, omegas.size))
    under = np.zeros((T.size, omegas.size), dtype=int)
    for i, t in enumerate(T):
        E = dyn.energy_grid(spec, t, K)
        w = _trapezoid_weights(E)
        zs = E + 1j / t
        reach = C * t**alpha
        for j, om in enumerate(omegas):
            sp = dataclasses.replace(spec, phase=float(om) % 1.0) if _dynamic(spec) else spec
            if two_sided:
                logs_all = []
                kmax = int(math.ceil(reach / 2)) - 1
                for k in range(-kmax, kmax + 1, anchor_stride):
                    logs_all.append(max_log_norms(sp, k, int(math.floor(reach)), zs))
                    logs_all.append(max_log_norms(sp, k, -int(math.floor(reach)), zs))
                integrals = [np.dot(w, np.exp(-2 * lg)) for lg in logs_all]
                idx = int(np.argmax(integrals))
                lg = logs_all[idx]
                val = integrals[idx]
            else:
                if max_norm is None:
                    lg = max_log_norms(sp, 0, int(math.floor(reach / 2)), zs)
                else:
                    lg = np.log([max_norm(reach / 2, z, om) for z in zs])
                val = np.dot(w, np.exp(-2 * lg))
            under[i, j] = int(np.count_nonzero(-2 * lg < -745))
            values[i, j] = t**m * val
    return PremiseScan(alpha, m, C, K, T, omegas, values, under, "two-sided" if two_sided else "one-sided")


# --- lower-bound certificate -----------------------------------------------

def corollary_exponent(alpha, p):
    """1/(1+alpha) - (1+4alpha)/(p(1+alpha)); works on numbers and sympy symbols."""
    return 1 / (1 + alpha) - (1 + 4 * alpha) / (p * (1 + alpha))


def moment_bound_exponent(alpha, p):
    """(p - 3 alpha)/(1 + alpha): T-exponent of the moment lower bound, before the |B(T)| factor."""
    return (p - 3 * alpha) / (1 + alpha)


def _solution_values(spec: PotentialSpec, E: float, lo: int, hi: int, seed) -> tuple[np.ndarray, float]:
    """Solution on sites lo..hi seeded by (v(lo+1), v(lo)) = seed, and ||V(0)||."""
    a, b = min(lo, 0), max(hi, 1)
    n = b - a + 1
    v = np.zeros(n)
    i0 = lo - a
    v[i0 + 1], v[i0] = seed
    w = spec.values(np.arange(a, b + 1))
    for i in range(i0 + 1, n - 1):
        v[i + 1] = (E - w[i]) * v[i] - v[i - 1]
    for i in range(i0, 0, -1):
        v[i - 1] = (E - w[i]) * v[i] - v[i + 1]
    V0 = math.hypot(v[1 - a], v[-a])
    return v[lo - a : hi - a + 1], V0


@dataclass(frozen=True, eq=False)
class InnerProductProfile:
    energies: np.ndarray
    seed_values: np.ndarray      # (2, len(E)): |<psi, v_E>| for the seeds (1,0) and (0,1), normalised
    best: np.ndarray             # pointwise max of the two seeds
    polynomial_degree: int
    eps0: float | None = None
    intervals: list = field(default_factory=list)
    support_radius: int = 0

    @property
    def interval_count_ok(self) -> bool:
        return len(self.intervals) <= max(self.polynomial_degree, 0)

    @property
    def within_support_radius(self) -> bool:
        return len(self.intervals) <= self.support_radius


def _inner_products(spec, psi: WavePacket, E: float, seed) -> tuple[float, float]:
    lo, hi = psi.support
    v, V0 = _solution_values(spec, E, lo, hi, seed)
    c = psi.coefficients[lo - psi.offset : hi - psi.offset + 1]
    raw = complex(np.dot(np.conj(c), v))
    return abs(raw), V0


def _sublevel_intervals(E: np.ndarray, g: np.ndarray, eps0: float) -> list[tuple[float, float]]:
    below = g < eps0
    out = []
    i = 0
    while i < E.size:
        if below[i]:
            j = i
            while j + 1 < E.size and below[j + 1]:
                j += 1
            out.append((float(E[i]), float(E[j])))
            i = j + 1
        else:
            i += 1
    return out


def inner_product_profile(spec, psi: WavePacket, E_grid, eps0: float | None = None) -> InnerProductProfile:
    """|<psi, v_E>| with v_E seeded at the left support edge and normalised to ||V_E(0)|| = 1.

    Both seeds (1,0) and (0,1) are evaluated; `best` keeps the larger.  The
    sublevel set {|<psi, v_E>| < eps0} is taken from the unnormalised seed
    (1,0) inner product, a polynomial in E, so its interval count is bounded
    by the degree.
    """
    E = np.asarray(E_grid, dtype=float)
    lo, hi = psi.support
    vals = np.zeros((2, E.size))
    raw = np.zeros(E.size)
    for i, e in enumerate(E):
        for s, seed in enumerate(((1.0, 0.0), (0.0, 1.0))):
            r, V0 = _inner_products(spec, psi, e, seed)
            vals[s, i] = r / V0
            if s == 0:
                raw[i] = r
    degree = hi - lo - 1
    intervals = _sublevel_intervals(E, raw, eps0) if eps0 is not None else []
    return InnerProductProfile(E, vals, vals.max(axis=0), degree, eps0, intervals, psi.radius)


def fattened_measure(intervals, T: float) -> float:
    """|B(T)|: length of the union of the open 1/T neighbourhoods of the intervals."""
    segs = sorted((a - 1 / T, b + 1 / T) for a, b in intervals)
    total, cur_a, cur_b = 0.0, None, None
    for a, b in segs:
        if cur_b is None or a > cur_b:
            if cur_b is not None:
                total += cur_b - cur_a
            cur_a, cur_b = a, b
        else:
            cur_b = max(cur_b, b)
    if cur_b is not None:
        total += cur_b - cur_a
    return total


@dataclass(frozen=True, eq=False)
class Certificate:
    alpha: float
    C: float
    eps0: float
    intervals: list
    T: float
    N: float
    B_measure: float
    log: list                    # one dict per sampled energy
    verdict: bool
    witness: float | None
    p: float
    P_shape: float               # |B(T)| N^{1-2 alpha} / T (the bound up to the unknown constant)
    moment_exponent: float       # (p - 3 alpha)/(1 + alpha)
    point_exponent: float | None  # corollary exponent when A is a finite point set
    P_measured: float | None = None
    C_hat_empirical: float | None = None
    notes: list = field(default_factory=list)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["verdict"] = "pass" if self.verdict else "fail"
        return d


def _sample_energies(intervals, per_interval: int) -> np.ndarray:
    pts = []
    for a, b in intervals:
        pts.append(np.array([a]) if a == b else np.linspace(a, b, per_interval + 2))
    return np.unique(np.concatenate(pts))


def _check_energy(spec, psi, E, s, Nf, bound, eps0):
    norms = []
    for anchor in (s + 1, -s - 1):
        lo, hi = min(-Nf, anchor), max(Nf, anchor)
        sc = norm_scan(spec, anchor, lo, hi, E)
        norms.append(sc.max if not sc.saturated else math.inf)
    r1, V1 = _inner_products(spec, psi, E, (1.0, 0.0))
    r2, V2 = _inner_products(spec, psi, E, (0.0, 1.0))
    ip = max(r1 / V1, r2 / V2)
    ok_norm = max(norms) <= bound
    ok_ip = ip > eps0
    return {"E": float(E), "norm_right": float(norms[0]), "norm_left": float(norms[1]),
            "norm_bound": float(bound), "inner_product": float(ip), "eps0": float(eps0),
            "norm_ok": bool(ok_norm), "inner_ok": bool(ok_ip), "refined": False}


def lower_bound_certificate(
    spec: PotentialSpec,
    psi: WavePacket,
    intervals: Sequence[tuple[float, float]],
    alpha: float,
    C: float,
    T: float,
    eps0: float | None = None,
    K: float | None = None,
    p: float = 2.0,
    per_interval: int = 64,
    refine: int = 4,
    measure: bool = False,
    box: BoxPolicy = BoxPolicy(),
) -> Certificate:
    """Check the lower-bound hypotheses on sampled energies of A and emit the implied bounds.

    Norms are checked for M(n, +-(s+1), E), |n| <= N = T^{1/(1+alpha)}; the
    pairwise bound over all (n, m) follows up to C^2 by submultiplicativity,
    a slack folded into C and noted on the certificate.
    """
    if alpha < 0 or C <= 0 or T <= 0:
        raise ValueError("need alpha >= 0, C > 0, T > 0")
    intervals = [(float(a), float(b)) for a, b in intervals]
    if not intervals or any(a > b for a, b in intervals):
        raise ValueError("A must be a non-empty list of intervals (a <= b)")
    K = spec.bound + 3.0 if K is None else K
    if any(a < -K or b > K for a, b in intervals):
        raise ValueError(f"A must lie inside [-{K}, {K}]")
    s = psi.radius
    N = T ** (1 / (1 + alpha))
    Nf = int(math.floor(N))
    bound = C * N**alpha
    energies = _sample_energies(intervals, per_interval)
    notes = ["norm checks anchored at +-(s+1); pairwise bound holds up to C^2, folded into C"]
    if eps0 is None:
        prof = inner_product_profile(spec, psi, energies)
        eps0 = 0.5 * float(prof.best.max())
        notes.append("eps0 = half the max of the inner-product profile over A")
    log = [_check_energy(spec, psi, E, s, Nf, bound, eps0) for E in energies]
    failed = [i for i, r in enumerate(log) if not (r["norm_ok"] and r["inner_ok"])]
    if failed and refine > 1:
        # localise each failure on a finer grid around it
        extra = []
        for i in failed:
            lo_e = energies[max(i - 1, 0)]
            hi_e = energies[min(i + 1, energies.size - 1)]
            for E in np.linspace(lo_e, hi_e, 2 * refine + 1):
                r = _check_energy(spec, psi, E, s, Nf, bound, eps0)
                r["refined"] = True
                extra.append(r)
        log += extra
    bad = [r for r in log if not (r["norm_ok"] and r["inner_ok"])]
    verdict = not bad
    witness = None
    if bad:
        worst = max(bad, key=lambda r: max(r["norm_right"], r["norm_left"]) / r["norm_bound"]
                    + (0 if r["inner_ok"] else 1e300))
        witness = worst["E"]
    Bm = fattened_measure(intervals, T)
    point_set = all(a == b for a, b in intervals)
    cert = Certificate(
        alpha, C, float(eps0), intervals, T, N, Bm, log, verdict, witness, p,
        Bm * N ** (1 - 2 * alpha) / T, moment_bound_exponent(alpha, p),
        corollary_exponent(alpha, p) if point_set else None, notes=notes,
    )
    if measure:
        L = box.half_width(spec, psi, T)
        prof = dyn.time_average_resolvent(psi, spec, T, L)
        Pm = dyn.outside_probability(prof, N / 2).P
        cert = dataclasses.replace(cert, P_measured=Pm, C_hat_empirical=Pm * T / (Bm * N ** (1 - 2 * alpha)))
    return cert
