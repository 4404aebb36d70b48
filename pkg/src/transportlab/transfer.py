"""Transfer-matrix cocycle of the difference equation H u = z u.

With U(n) = (u(n+1), u(n)) a solution satisfies U(n) = M(n, k, z) U(k), where

    A(n, z) = [[z - W(n), -1], [1, 0]]
    M(n, k, z) = A(n) ... A(k+1)            n > k
               = Id                         n = k
               = A(n+1)^-1 ... A(k)^-1      n < k

Single products are evaluated in extended precision; energy scans run in
double precision through compiled kernels and saturate at SATURATION.
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import mpmath
import numpy as np
from numba import njit

from .lattice import PotentialSpec

SATURATION = 1e12
WORKING_DPS = 40


def operator_norm(m: np.ndarray) -> np.ndarray:
    """Largest singular value of 2x2 matrices (closed form, broadcast over leading axes)."""
    m = np.asarray(m)
    a, b, c, d = m[..., 0, 0], m[..., 0, 1], m[..., 1, 0], m[..., 1, 1]
    fro = np.abs(a) ** 2 + np.abs(b) ** 2 + np.abs(c) ** 2 + np.abs(d) ** 2
    det = np.abs(a * d - b * c)
    disc = np.sqrt(np.maximum((fro - 2 * det) * (fro + 2 * det), 0.0))
    return np.sqrt((fro + disc) / 2)


@dataclass(frozen=True, eq=False)
class TransferMatrix:
    """A 2x2 transfer matrix.

    `det` is the determinant evaluated at the precision the product was
    formed in; for double-precision products it is recomputed from entries.
    """

    matrix: np.ndarray
    det: complex
    saturated: bool = False

    @classmethod
    def from_array(cls, m) -> "TransferMatrix":
        m = np.asarray(m, dtype=complex).reshape(2, 2)
        return cls(m, complex(m[0, 0] * m[1, 1] - m[0, 1] * m[1, 0]))

    @property
    def norm(self) -> float:
        return float(operator_norm(self.matrix))

    @property
    def trace(self) -> complex:
        return complex(self.matrix[0, 0] + self.matrix[1, 1])

    def __matmul__(self, other: "TransferMatrix") -> "TransferMatrix":
        m = self.matrix @ other.matrix
        return TransferMatrix(m, self.det * other.det, self.saturated or other.saturated)


def step_matrix(spec: PotentialSpec, n: int, z: complex) -> TransferMatrix:
    """A(n, z)."""
    return TransferMatrix.from_array([[z - spec(n), -1.0], [1.0, 0.0]])


def step_inverse(spec: PotentialSpec, n: int, z: complex) -> TransferMatrix:
    """A(n, z)^-1 = [[0, 1], [-1, z - W(n)]]."""
    return TransferMatrix.from_array([[0.0, 1.0], [-1.0, z - spec(n)]])


def _mp_product(w, z: complex, forward: bool):
    """Entries of the product of step matrices over potential values w, at the current mp precision."""
    zz = mpmath.mpc(complex(z).real, complex(z).imag)
    a, b, c, d = mpmath.mpc(1), mpmath.mpc(0), mpmath.mpc(0), mpmath.mpc(1)
    for wi in w:
        e = zz - mpmath.mpf(float(wi))
        if forward:
            a, b, c, d = e * a - c, e * b - d, a, b
        else:
            a, b, c, d = c, d, e * c - a, e * d - b
    return a, b, c, d


def transfer_entries_mp(spec: PotentialSpec, n: int, k: int, z: complex):
    """Unsaturated M(n, k, z) as four mpmath numbers at the caller's precision."""
    if n == k:
        return mpmath.mpc(1), mpmath.mpc(0), mpmath.mpc(0), mpmath.mpc(1)
    return _mp_product(spec.values(_path_sites(k, n)).astype(float), z, n > k)


def transfer_product(spec: PotentialSpec, n: int, k: int, z: complex, dps: int = WORKING_DPS) -> TransferMatrix:
    """M(n, k, z), formed in `dps`-digit arithmetic.

    Stops at the first partial product whose norm exceeds SATURATION and
    returns it flagged; such a matrix only certifies that the norm is large.
    The determinant is reported at working precision, so it stays within
    round-off of 1 even when the entries are huge.
    """
    if n == k:
        return TransferMatrix(np.eye(2, dtype=complex), 1 + 0j)
    forward = n > k
    w = spec.values(_path_sites(k, n)).astype(float)
    # locate saturation with the cheap double-precision pass first
    norms, saturated = _path_norms(w, complex(z), forward, SATURATION)
    if saturated:
        w = w[: int(np.argmax(norms >= SATURATION))]
    with mpmath.workdps(dps):
        a, b, c, d = _mp_product(w, z, forward)
        det = complex(a * d - b * c)
        m = np.array([[complex(a), complex(b)], [complex(c), complex(d)]])
    return TransferMatrix(m, det, saturated)


@njit(cache=True)
def _norm2x2(a, b, c, d):
    # unimodular input: |det| = 1
    fro = (a.real**2 + a.imag**2 + b.real**2 + b.imag**2
           + c.real**2 + c.imag**2 + d.real**2 + d.imag**2)
    disc = (fro - 2.0) * (fro + 2.0)
    if disc < 0.0:
        disc = 0.0
    return math.sqrt((fro + math.sqrt(disc)) / 2.0)


@njit(cache=True)
def _path_norms(w, z, forward, sat):
    """Norms of M after each step along the path (index 0 is the identity)."""
    out = np.empty(w.size + 1)
    out[0] = 1.0
    a = 1.0 + 0j
    b = 0j
    c = 0j
    d = 1.0 + 0j
    saturated = False
    for i in range(w.size):
        if saturated:
            out[i + 1] = sat
            continue
        e = z - w[i]
        if forward:
            a, b, c, d = e * a - c, e * b - d, a, b
        else:
            a, b, c, d = c, d, e * c - a, e * d - b
        nrm = _norm2x2(a, b, c, d)
        if nrm > sat:
            saturated = True
            nrm = sat
        out[i + 1] = nrm
    return out, saturated


@njit(cache=True)
def _path_max(w, zs, forward, sat):
    """max over the path of ||M|| for each energy in zs (identity included)."""
    nz = zs.size
    out = np.ones(nz)
    flags = np.zeros(nz, dtype=np.bool_)
    for j in range(nz):
        z = zs[j]
        a = 1.0 + 0j
        b = 0j
        c = 0j
        d = 1.0 + 0j
        mx = 1.0
        for i in range(w.size):
            e = z - w[i]
            if forward:
                a, b, c, d = e * a - c, e * b - d, a, b
            else:
                a, b, c, d = c, d, e * c - a, e * d - b
            nrm = _norm2x2(a, b, c, d)
            if nrm > mx:
                mx = nrm
            if nrm > sat:
                mx = sat
                flags[j] = True
                break
        out[j] = mx
    return out, flags


@njit(cache=True)
def _path_logmax(w, zs, forward):
    """log max over the path of ||M|| for each z, with rescaling instead of saturation."""
    nz = zs.size
    out = np.zeros(nz)
    for j in range(nz):
        z = zs[j]
        a = 1.0 + 0j
        b = 0j
        c = 0j
        d = 1.0 + 0j
        scale = 0.0
        mx = 0.0
        for i in range(w.size):
            e = z - w[i]
            if forward:
                a, b, c, d = e * a - c, e * b - d, a, b
            else:
                a, b, c, d = c, d, e * c - a, e * d - b
            fro = (a.real**2 + a.imag**2 + b.real**2 + b.imag**2
                   + c.real**2 + c.imag**2 + d.real**2 + d.imag**2)
            if fro > 1e100:
                s = math.sqrt(fro)
                a /= s
                b /= s
                c /= s
                d /= s
                scale += math.log(s)
                fro /= s * s
            det = math.exp(-2.0 * scale)
            disc = (fro - 2.0 * det) * (fro + 2.0 * det)
            if disc < 0.0:
                disc = 0.0
            lg = scale + 0.5 * math.log((fro + math.sqrt(disc)) / 2.0)
            if lg > mx:
                mx = lg
        out[j] = mx
    return out


@njit(cache=True)
def _log_growth(w, z, renorm_every):
    a = 1.0 + 0j
    b = 0j
    c = 0j
    d = 1.0 + 0j
    acc = 0.0
    for i in range(w.size):
        e = z - w[i]
        a, b, c, d = e * a - c, e * b - d, a, b
        if (i + 1) % renorm_every == 0:
            s = math.sqrt(a.real**2 + a.imag**2 + b.real**2 + b.imag**2
                          + c.real**2 + c.imag**2 + d.real**2 + d.imag**2)
            acc += math.log(s)
            a /= s
            b /= s
            c /= s
            d /= s
    fro = (a.real**2 + a.imag**2 + b.real**2 + b.imag**2
           + c.real**2 + c.imag**2 + d.real**2 + d.imag**2)
    # after renormalisation det is tiny; the top singular value is sqrt(fro) to leading order
    return acc + 0.5 * math.log(fro)


def _path_sites(k: int, n: int) -> np.ndarray:
    """Sites whose step matrices build M(n, k), in order of application."""
    return np.arange(k + 1, n + 1) if n > k else np.arange(k, n, -1)


@dataclass(frozen=True, eq=False)
class NormScan:
    anchor: int
    n_lo: int
    n_hi: int
    z: complex
    norms: np.ndarray          # ||M(n, anchor, z)|| for n = n_lo..n_hi
    running_max: np.ndarray    # max over sites between anchor and n
    max: float
    saturated: bool

    @property
    def sites(self) -> np.ndarray:
        return np.arange(self.n_lo, self.n_hi + 1)


def norm_scan(spec: PotentialSpec, k: int, n_lo: int, n_hi: int, z: complex) -> NormScan:
    """||M(n, k, z)|| for n in [n_lo, n_hi], one multiply per step away from k."""
    if n_lo > n_hi:
        raise ValueError("empty range")
    if n_lo > k + 1 or n_hi < k - 1:
        raise ValueError("range must contain or abut the anchor")
    z = complex(z)
    norms = np.empty(n_hi - n_lo + 1)
    running = np.empty_like(norms)
    saturated = False
    hi_len = max(n_hi - k, 0)
    fw, sf = _path_norms(spec.values(_path_sites(k, k + hi_len)), z, True, SATURATION)
    lo_len = max(k - n_lo, 0)
    bw, sb = _path_norms(spec.values(_path_sites(k, k - lo_len)), z, False, SATURATION)
    saturated = sf or sb
    fmax = np.maximum.accumulate(fw)
    bmax = np.maximum.accumulate(bw)
    for i, n in enumerate(range(n_lo, n_hi + 1)):
        if n >= k:
            norms[i], running[i] = fw[n - k], fmax[n - k]
        else:
            norms[i], running[i] = bw[k - n], bmax[k - n]
    return NormScan(k, n_lo, n_hi, z, norms, running, float(running.max()), bool(saturated))


def max_norms(spec: PotentialSpec, k: int, n_end: int, zs) -> tuple[np.ndarray, np.ndarray]:
    """max_{n between k and n_end} ||M(n, k, z)|| for every z in zs, with saturation flags."""
    zs = np.ascontiguousarray(np.atleast_1d(np.asarray(zs, dtype=complex)))
    w = spec.values(_path_sites(k, n_end)).astype(float)
    return _path_max(w, zs, n_end >= k, SATURATION)


def max_log_norms(spec: PotentialSpec, k: int, n_end: int, zs) -> np.ndarray:
    """log max_{n between k and n_end} ||M(n, k, z)||, never saturated."""
    zs = np.ascontiguousarray(np.atleast_1d(np.asarray(zs, dtype=complex)))
    w = spec.values(_path_sites(k, n_end)).astype(float)
    return _path_logmax(w, zs, n_end >= k)


def lyapunov_estimate(spec: PotentialSpec, E: complex, n_max: int, renorm_every: int = 8) -> float:
    """(1/n_max) log ||M(n_max, 0, E)|| with periodic renormalisation of the product."""
    if n_max < 100:
        raise ValueError("n_max must be >= 100")
    w = spec.values(np.arange(1, n_max + 1)).astype(float)
    return _log_growth(w, complex(E), renorm_every) / n_max


def phi_statistic(
    spec: PotentialSpec,
    E: float,
    T: float,
    alpha: float,
    m: float,
    omegas: Sequence[float] | None = None,
    zs: Sequence[complex] | None = None,
    max_norm: Callable[[int, complex, float], float] | None = None,
) -> float:
    """Sampled surrogate of inf_{|z-E|<=T^-alpha, omega} T^-m max_{0<=n<=T^alpha} ||M(n,0,z,omega)||.

    The infimum runs over finite samples only, so the result is an upper
    bound on the true infimum.  Defaults: 32 equidistributed phases and the
    disc centre plus 8 points on its boundary.  Norms are tracked in log
    form, so no saturation cap enters.  `max_norm(bound, z, omega)` replaces
    the transfer-matrix evaluation of the max over 0 <= n <= bound (used for
    closed-form checks).
    """
    if not 0 < alpha <= 1 or m <= 1:
        raise ValueError("need 0 < alpha <= 1 and m > 1")
    if omegas is None:
        omegas = np.arange(32) / 32
    if zs is None:
        r = T ** (-alpha)
        zs = [E] + [E + r * np.exp(2j * np.pi * j / 8) for j in range(8)]
    omegas = list(omegas)
    zs = np.asarray(list(zs), dtype=complex)
    if len(omegas) == 0 or zs.size == 0:
        raise ValueError("sample sets must be non-empty")
    bound = T**alpha
    best = math.inf
    for om in omegas:
        if max_norm is None:
            shifted = dataclasses.replace(spec, phase=float(om) % 1.0)
            logs = max_log_norms(shifted, 0, int(math.floor(bound)), zs)
        else:
            logs = np.log([max_norm(bound, z, om) for z in zs])
        best = min(best, float(logs.min()))
    return math.exp(best - m * math.log(T))


@dataclass(frozen=True, eq=False)
class EnergyScan:
    energies: np.ndarray
    sup_norms: np.ndarray
    saturated: np.ndarray
    candidates: np.ndarray     # indices of flagged local minima
    threshold: float

    def rows(self):
        return list(zip(self.energies.tolist(), self.sup_norms.tolist()))

    @property
    def candidate_energies(self) -> np.ndarray:
        return self.energies[self.candidates]


def bounded_energy_scan(spec: PotentialSpec, energies, n_max: int, threshold: float = 50.0) -> EnergyScan:
    """sup_{0<=n<=n_max} ||M(n, 0, E)|| on a grid; local minima below threshold are candidates."""
    energies = np.asarray(energies, dtype=float)
    if energies.size == 0:
        raise ValueError("energy grid must be non-empty")
    sup, sat = max_norms(spec, 0, n_max, energies.astype(complex))
    left = np.r_[np.inf, sup[:-1]]
    right = np.r_[sup[1:], np.inf]
    cand = np.flatnonzero((sup <= left) & (sup <= right) & (sup < threshold))
    return EnergyScan(energies, sup, sat, cand, threshold)


def block_matrix(block: Sequence[float], E: complex) -> np.ndarray:
    """Transfer matrix across one polymer block, A(L-1) ... A(0)."""
    m = np.eye(2, dtype=complex)
    for w in block:
        m = np.array([[E - w, -1.0], [1.0, 0.0]]) @ m
    return m


@dataclass(frozen=True)
class CriticalDiagnostics:
    commutator_norm: float
    trace_plus: complex
    trace_minus: complex
    plus_is_identity: bool
    minus_is_identity: bool


def _pm_identity(m: np.ndarray, tol: float) -> bool:
    eye = np.eye(2)
    return bool(min(np.abs(m - eye).max(), np.abs(m + eye).max()) <= tol)


def critical_energy_test(block_plus, block_minus, E: float, tol: float = 1e-10) -> tuple[bool, CriticalDiagnostics]:
    """Is E a critical energy of the polymer pair?

    Both single-polymer matrices must commute, and each must either have
    |trace| < 2 or equal +-Id.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    tp = block_matrix(block_plus, E)
    tm = block_matrix(block_minus, E)
    comm = float(operator_norm(tp @ tm - tm @ tp))
    ip, im = _pm_identity(tp, tol), _pm_identity(tm, tol)
    trp, trm = complex(np.trace(tp)), complex(np.trace(tm))
    ok_p = ip or abs(trp) < 2
    ok_m = im or abs(trm) < 2
    verdict = comm <= tol and ok_p and ok_m
    return verdict, CriticalDiagnostics(comm, trp, trm, ip, im)
