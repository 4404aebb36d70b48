"""Fibonacci trace map.

For the Fibonacci potential (golden theta, phase 0) the traces of the
renormalised transfer matrices M(q_k, 0, E), q_k = F_k with
F_1 = 1, F_2 = 2, F_3 = 3, F_4 = 5, ..., obey

    x_{k+1} = x_k x_{k-1} - x_{k-2},     x_{-1} = 2, x_0 = E.

The orbit stores full traces.  The Fricke form x^2 + y^2 + z^2 - 2xyz is
evaluated on half traces, where it equals 1 + lambda^2/4; which of the two
normalisations produces that constant is decided numerically on first use
and recorded on every orbit.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import mpmath
import numpy as np
from scipy.optimize import brentq

from .lattice import PotentialSpec
from .transfer import transfer_entries_mp

PHI = (1.0 + math.sqrt(5.0)) / 2.0
DELTA_MAX = 0.1
_DIRECT_CHECK_MAX = 16


def fibonacci_length(k: int) -> int:
    """q_k = F_k with F_-1 = 1 (formal), F_0 = 1, F_1 = 1, F_2 = 2, F_3 = 3, ..."""
    if k < -1:
        raise ValueError("k must be >= -1")
    if k <= 1:
        return 1
    a, b = 1, 2
    for _ in range(k - 2):
        a, b = b, a + b
    return b


def direct_trace(lam: float, E: complex, k: int):
    """tr M(q_k, 0, E) from an explicit matrix product (k >= 1), as an mpmath number.

    Evaluated at the current mpmath precision and never saturated.
    """
    if k < 1:
        raise ValueError("direct traces start at k = 1")
    a, _, _, d = transfer_entries_mp(PotentialSpec.fibonacci(lam), fibonacci_length(k), 0, E)
    return a + d


def fricke_invariant(triple, lam: float | None = None) -> complex:
    """x^2 + y^2 + z^2 - 2xyz.

    `lam` is accepted for symmetry with the surface equation; the value
    itself does not depend on it.
    """
    x, y, z = triple
    return x * x + y * y + z * z - 2 * x * y * z


@lru_cache(maxsize=1)
def resolve_normalisation() -> str:
    """Pick 'half-trace' or 'full-trace' by testing the surface constant at lambda = 1.

    Also confirms the index convention: recursion output must match direct
    products for the first few k, otherwise the convention is wrong.
    """
    lam, E = 1.0, 0.37
    with mpmath.workdps(30):
        x = [2.0, E] + [float(direct_trace(lam, E, k).real) for k in range(1, 9)]
    for k in range(3, 10):
        pred = x[k - 1] * x[k - 2] - x[k - 3]
        if abs(pred - x[k]) > 1e-8 * max(1.0, abs(x[k - 1] * x[k - 2])):
            raise RuntimeError("Fibonacci index convention fails the brute-force equivalence check")
    target = 1 + lam**2 / 4
    triple = np.array(x[3:0:-1])
    full = fricke_invariant(triple)
    half = fricke_invariant(triple / 2)
    if abs(half - target) < 1e-9:
        return "half-trace"
    if abs(full - target) < 1e-9:
        return "full-trace"
    raise RuntimeError(f"neither normalisation yields 1 + lambda^2/4 (full {full}, half {half})")


@dataclass(frozen=True, eq=False)
class TraceOrbit:
    """x_{-1}, ..., x_{k_max+1} as full traces (index k at position k+1).

    Traces are held as mpmath numbers at `dps` digits, chosen from the orbit's
    own magnitude so that the Fricke form keeps its digits despite the
    cancellation between O(|x|^3) terms.  `log_scaled` flags orbits whose
    values leave the double range; read those through `log_x`.
    """

    lam: float
    E: complex
    k_max: int
    traces: tuple
    dps: int
    normalisation: str
    convention: str = "q_k = F_k with F_1=1, F_2=2, F_3=3, F_4=5; x_-1 = 2, x_0 = E"
    log_scaled: bool = False
    direct_residuals: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def x(self, k: int) -> complex:
        v = complex(self.traces[k + 1])
        if not np.isfinite(v):
            raise OverflowError(f"x_{k} exceeds double range; use log_x")
        return v

    def log_x(self, k: int) -> complex:
        """Complex logarithm of x_k (finite for any magnitude)."""
        with mpmath.workdps(self.dps):
            return complex(mpmath.log(self.traces[k + 1]))

    def triple(self, k: int) -> np.ndarray:
        """(x_{k+1}, x_k, x_{k-1}) for k = 0..k_max."""
        return np.array([self.x(k + 1), self.x(k), self.x(k - 1)])

    def _surface(self, k: int):
        t = self.traces[k + 2], self.traces[k + 1], self.traces[k]
        return tuple(v / 2 for v in t) if self.normalisation == "half-trace" else t

    def surface_triple(self, k: int) -> np.ndarray:
        """The triple in the normalisation whose Fricke constant is 1 + lambda^2/4."""
        return np.array([complex(v) for v in self._surface(k)])

    def fricke(self) -> np.ndarray:
        """I(k) for k = 0..k_max, evaluated at the orbit's precision."""
        with mpmath.workdps(self.dps):
            return np.array([complex(fricke_invariant(self._surface(k))) for k in range(self.k_max + 1)])

    def recursion_residuals(self) -> np.ndarray:
        """|x_{k+1} - (x_k x_{k-1} - x_{k-2})| / max(1, |x_k x_{k-1}|) for k = 1..k_max."""
        t = self.traces
        out = []
        with mpmath.workdps(self.dps):
            for k in range(1, self.k_max + 1):
                prod = t[k + 1] * t[k]
                out.append(float(abs(t[k + 2] - (prod - t[k - 1])) / max(1, abs(prod))))
        return np.array(out)


def _orbit_values(lam: float, E: complex, k_max: int) -> list:
    x = [mpmath.mpc(2), mpmath.mpc(E)]
    x += [direct_trace(lam, E, 1), direct_trace(lam, E, 2)]
    for _ in range(2, k_max + 1):
        x.append(x[-1] * x[-2] - x[-3])
    return x


def trace_orbit(lam: float, E: complex, k_max: int) -> TraceOrbit:
    """Trace orbit up to x_{k_max+1}; seeds x_1, x_2 come from direct products.

    Direct products at lengths q_k are compared with the recursion for
    k <= 16 and the relative residuals stored on the orbit.
    """
    if k_max < 3:
        raise ValueError("k_max must be >= 3")
    norm = resolve_normalisation()
    E = complex(E)
    with mpmath.workdps(30):
        rough = _orbit_values(lam, E, k_max)
        mag = max(float(mpmath.log10(abs(v))) if v != 0 else 0.0 for v in rough)
    dps = 30 + 3 * max(int(math.ceil(mag)), 0)
    with mpmath.workdps(dps):
        x = _orbit_values(lam, E, k_max)
        res = []
        for k in range(3, min(k_max + 1, _DIRECT_CHECK_MAX) + 1):
            d = direct_trace(lam, E, k)
            res.append(float(abs(d - x[k + 1]) / max(1, abs(d))))
    return TraceOrbit(lam, E, k_max, tuple(x), dps, norm,
                      log_scaled=mag > 300, direct_residuals=np.array(res))


def _trace_and_derivative(lam: float, E: float, k: int, seed_derivs=(0.0, 1.0, 1.0)):
    """(x_k(E), x_k'(E)) by the recursion and its derivative."""
    x = [2.0, E, E - lam]
    dx = list(seed_derivs)
    if k <= 1:
        return x[k + 1], dx[k + 1]
    for _ in range(k - 1):
        x_new = x[-1] * x[-2] - x[-3]
        d_new = dx[-1] * x[-2] + x[-1] * dx[-2] - dx[-3]
        x = [x[-2], x[-1], x_new]
        dx = [dx[-2], dx[-1], d_new]
    return x[-1], dx[-1]


def trace_polynomial(lam: float, E, k: int):
    """x_k evaluated by recursion (vectorised in E)."""
    E = np.asarray(E, dtype=float)
    a, b, c = np.full(E.shape, 2.0), E, E - lam
    if k == -1:
        return a
    if k == 0:
        return b
    for _ in range(k - 1):
        a, b, c = b, c, c * b - a
    return c


def trace_derivative(lam: float, E: float, k: int, seed_derivs=(0.0, 1.0, 1.0)) -> float:
    """x_k'(E) from the differentiated recursion.

    seed_derivs are (x_-1', x_0', x_1'); the defaults follow from x_-1 = 2,
    x_0 = E, x_1 = E - lambda.
    """
    return float(_trace_and_derivative(lam, float(E), k, seed_derivs)[1])


@dataclass(frozen=True, eq=False)
class BandData:
    lam: float
    k: int
    q: int
    zeros: np.ndarray
    derivatives: np.ndarray     # |x_k'| at each zero
    delta: float = DELTA_MAX


class ZeroCountError(RuntimeError):
    def __init__(self, found: int, expected: int):
        super().__init__(f"found {found} zeros of x_k, expected q_k = {expected}")
        self.found = found
        self.expected = expected


def band_zeros(lam: float, k: int, delta: float = DELTA_MAX, max_refine: int = 6) -> BandData:
    """All q_k real zeros of x_k by sign-change bracketing plus Brent polishing."""
    q = fibonacci_length(k)
    if q > 10**4:
        raise ValueError("q_k exceeds 1e4")
    if k < 1:
        raise ValueError("k must be >= 1")
    lo, hi = -3.0 - lam, 3.0 + lam
    npts = 64 * q + 1
    roots = np.zeros(0)
    for _ in range(max_refine):
        grid = np.linspace(lo, hi, npts)
        with np.errstate(over="ignore", invalid="ignore"):
            # far outside the spectrum the traces overflow; no zeros live there
            vals = trace_polynomial(lam, grid, k)
        exact = np.flatnonzero(vals == 0)
        sgn = np.sign(vals)
        idx = np.flatnonzero(sgn[:-1] * sgn[1:] < 0)
        found = [brentq(lambda e: trace_polynomial(lam, e, k), grid[i], grid[i + 1], xtol=1e-13)
                 for i in idx]
        roots = np.sort(np.r_[found, grid[exact]])
        if roots.size == q:
            break
        npts = 4 * (npts - 1) + 1
    if roots.size != q:
        raise ZeroCountError(roots.size, q)
    ders = np.array([abs(trace_derivative(lam, e, k)) for e in roots])
    return BandData(lam, k, q, roots, ders, delta)


def radius_prefactors(delta: float) -> tuple[float, float]:
    """(c_R, c_r): 1/R >= c_R min|x'|, 1/r <= c_r |x'|."""
    c_R = delta**2 / ((1 + delta) ** 2 * (1 + 2 * delta) ** 2)
    c_r = (2 + 3 * delta) ** 2 / ((1 + delta) * (1 + 2 * delta**2))
    return c_R, c_r


@dataclass(frozen=True, eq=False)
class RadiusBounds:
    k: int
    delta: float
    r_proxy: np.ndarray       # per-zero lower proxy for the inner radius
    R_proxy: np.ndarray       # per-zero upper proxy for the outer radius
    degenerate: np.ndarray    # zero derivative at the zero

    @property
    def r_min(self) -> float:
        return float(np.min(self.r_proxy))

    @property
    def R_max(self) -> float:
        return float(np.max(self.R_proxy))


def radius_bounds(band: BandData, delta: float | None = None, delta_max: float = DELTA_MAX) -> RadiusBounds:
    delta = band.delta if delta is None else delta
    if not 0 < delta <= delta_max:
        raise ValueError(f"delta must lie in (0, {delta_max}]")
    c_R, c_r = radius_prefactors(delta)
    d = band.derivatives
    degenerate = d == 0
    with np.errstate(divide="ignore"):
        R = np.where(degenerate, np.inf, 1.0 / (c_R * d))
        r = np.where(degenerate, np.inf, 1.0 / (c_r * d))
    return RadiusBounds(band.k, delta, r, R, degenerate)


def upper_exponent_estimate(lam: float, delta: float, k_range, radii: dict[int, float] | None = None) -> float:
    """log(phi) / slope of log(1/R_k) against k.

    R_k is the outer-radius proxy of band k; `radii` replaces the computed
    values (k -> R_k) when given.
    """
    ks = sorted(set(int(k) for k in k_range))
    if radii is None:
        radii = {k: radius_bounds(band_zeros(lam, k, delta), delta).R_max for k in ks}
    ks = [k for k in ks if k in radii and np.isfinite(radii[k]) and radii[k] > 0]
    if len(ks) < 3:
        raise ValueError("need at least 3 usable k")
    y = np.log(1.0 / np.array([radii[k] for k in ks]))
    slope = np.polyfit(np.array(ks, dtype=float), y, 1)[0]
    if slope <= 0:
        raise ValueError("radii do not shrink with k")
    return math.log(PHI) / slope


@dataclass(frozen=True)
class EtaConstant:
    lam: float
    a: float
    eta: float

    @property
    def exponent(self) -> float:
        """1/(1+eta)."""
        return 1.0 / (1.0 + self.eta)


def eta_constant(lam: float) -> EtaConstant:
    """eta = 2 log[sqrt(5+2 lam) (3+lam) a] / log(phi), a the largest root of x^3-(2+lam)x-1."""
    if lam <= 0:
        raise ValueError("lambda must be positive")
    f = lambda x: x**3 - (2 + lam) * x - 1
    # the cubic is increasing past its local max at sqrt((2+lam)/3), and f(3+lam) > 0
    a = brentq(f, math.sqrt((2 + lam) / 3), 3 + lam, xtol=1e-14)
    eta = 2 * math.log(math.sqrt(5 + 2 * lam) * (3 + lam) * a) / math.log(PHI)
    return EtaConstant(lam, a, eta)
