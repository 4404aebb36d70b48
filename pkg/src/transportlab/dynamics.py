"""Wavepacket evolution and exponentially time-averaged probabilities.

    a(psi, n, T) = (2/T) int_0^inf e^{-2t/T} |psi(t, n)|^2 dt

is computed three ways on a Dirichlet box [-L, L]:

* resolvent   -- (1/(pi T)) int |((H - E - i/T)^-1 psi)(n)|^2 dE, one complex
                 tridiagonal solve per energy node (production route);
* quadrature  -- Gauss-Legendre panels in time over the eigen-propagated state;
* eigen-exact -- the time integral done in closed form in the eigenbasis.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from numba import njit

from .lattice import PotentialSpec, TruncatedHamiltonian, WavePacket, build_truncated

EIGEN_EXACT_MAX_L = 300
QUADRATURE_HORIZON = 1e-10
_TAIL_NODES = 64


@lru_cache(maxsize=8)
def _hamiltonian(spec: PotentialSpec, L: int) -> TruncatedHamiltonian:
    # one instance per (spec, L) so its cached eigensystem is shared
    return build_truncated(spec, L)


def truncated(spec: PotentialSpec, L: int, state: WavePacket | None = None) -> TruncatedHamiltonian:
    if state is not None:
        build_truncated(spec, L, state)   # support check only
    return _hamiltonian(spec, L)


def evolve_dense(psi: WavePacket, spec: PotentialSpec, times, L: int) -> np.ndarray:
    """psi(t) on [-L, L] for every t in `times`, shape (len(times), 2L+1)."""
    H = truncated(spec, L, psi)
    times = np.atleast_1d(np.asarray(times, dtype=float))
    if np.any(times < 0):
        raise ValueError("times must be >= 0")
    E, V = H.eigensystem
    c = V.T @ psi.dense(L)
    return (V @ (np.exp(-1j * np.outer(E, times)) * c[:, None])).T


def evolve(psi: WavePacket, spec: PotentialSpec, t: float, L: int) -> WavePacket:
    """e^{-itH_L} psi through the eigen-decomposition of H_L."""
    return WavePacket.from_dense(evolve_dense(psi, spec, [t], L)[0], L)


@dataclass(frozen=True, eq=False)
class TimeAverageProfile:
    """a(n) for |n| <= L (index n + L)."""

    T: float
    L: int
    values: np.ndarray
    method: str
    leakage: float
    tolerance: float
    norm2: float
    meta: dict = field(default_factory=dict)

    @property
    def sites(self) -> np.ndarray:
        return np.arange(-self.L, self.L + 1)

    def __call__(self, n: int) -> float:
        return float(self.values[n + self.L]) if abs(n) <= self.L else 0.0

    @property
    def total(self) -> float:
        return float(self.values.sum())

    @property
    def error_bar(self) -> float:
        return max(self.leakage, self.tolerance)


def _boundary_mass(values: np.ndarray) -> float:
    # mass on the last three sites at each end, |n| >= L - 2
    return float(values[:3].sum() + values[-3:].sum())


@njit(cache=True)
def _resolvent_accumulate(diag, psi, energies, weights, eps):
    """sum_j weights[j, :] |((H - E_j - i eps)^-1 psi)(n)|^2, by a complex Thomas sweep."""
    N = diag.size
    nw = weights.shape[1]
    acc = np.zeros((nw, N))
    cp = np.empty(N, dtype=np.complex128)
    dp = np.empty(N, dtype=np.complex128)
    u = np.empty(N, dtype=np.complex128)
    for j in range(energies.size):
        z = energies[j] + 1j * eps
        # Im of every pivot stays <= -eps, so no pivot can vanish
        m = diag[0] - z
        cp[0] = 1.0 / m
        dp[0] = psi[0] / m
        for i in range(1, N):
            m = (diag[i] - z) - cp[i - 1]
            cp[i] = 1.0 / m
            dp[i] = (psi[i] - dp[i - 1]) / m
        u[N - 1] = dp[N - 1]
        for i in range(N - 2, -1, -1):
            u[i] = dp[i] - cp[i] * u[i + 1]
        for k in range(nw):
            w = weights[j, k]
            if w != 0.0:
                for i in range(N):
                    acc[k, i] += w * (u[i].real * u[i].real + u[i].imag * u[i].imag)
    return acc


def energy_grid(spec: PotentialSpec, T: float, span: float | None = None) -> np.ndarray:
    """Uniform grid on [-K', K'], K' = B + 3, spacing <= 1/(4T), even interval count."""
    K = spec.bound + 3.0 if span is None else span
    n = int(math.ceil(2 * K * 4 * T))
    n += n % 2
    return np.linspace(-K, K, n + 1)


def time_average_resolvent(
    psi: WavePacket,
    spec: PotentialSpec,
    T: float,
    L: int,
    energies: np.ndarray | None = None,
) -> TimeAverageProfile:
    """Resolvent route.

    The trapezoid rule covers the grid; both tails beyond it are integrated
    with the substitution E = E_edge / s and Gauss-Legendre nodes in s, since
    the Lorentzian tails are far too heavy to drop.  The coarse (every second
    node) trapezoid sum gives the quadrature error estimate.
    """
    if T <= 0:
        raise ValueError("T must be positive")
    H = truncated(spec, L, psi)
    if energies is None:
        energies = energy_grid(spec, T)
    energies = np.asarray(energies, dtype=float)
    K = spec.bound + 3.0
    h = np.diff(energies)
    if energies.size < 3 or np.any(h <= 0):
        raise ValueError("energy grid must be increasing with at least 3 nodes")
    if energies[0] > -K or energies[-1] < K:
        raise ValueError(f"energy grid must cover [-{K}, {K}]")
    if h.max() > 1 / (4 * T) * (1 + 1e-9):
        raise ValueError("energy grid spacing must be <= 1/(4T)")
    a, b = energies[0], energies[-1]

    w_fine = np.zeros(energies.size)
    w_fine[:-1] += h / 2
    w_fine[1:] += h / 2
    # trapezoid on every second node, only meaningful on a uniform grid
    w_coarse = np.zeros(energies.size)
    if energies.size % 2 == 1 and np.allclose(h, h[0]):
        w_coarse[::2] = 2 * h[0]
        w_coarse[0] = w_coarse[-1] = h[0]
    s, ws = np.polynomial.legendre.leggauss(_TAIL_NODES)
    s, ws = (s + 1) / 2, ws / 2
    tail_E = np.r_[b / s, a / s]
    tail_w = np.r_[ws * b / s**2, ws * (-a) / s**2]
    nodes = np.r_[energies, tail_E]
    weights = np.zeros((nodes.size, 2))
    weights[: energies.size, 0] = w_fine
    weights[: energies.size, 1] = w_coarse
    weights[energies.size :, :] = tail_w[:, None]

    vec = psi.dense(L)
    acc = _resolvent_accumulate(H.diagonal.astype(float), vec, nodes, weights, 1.0 / T)
    fine = acc[0] / (math.pi * T)
    coarse = acc[1] / (math.pi * T)
    quad_err = float(np.abs(fine - coarse).sum()) if w_coarse.any() else 0.0
    norm2 = psi.norm2
    edge = 2.0 + spec.bound
    tail_bound = norm2 * (1 / (b - edge) + 1 / (-a - edge)) / (math.pi * T)
    leak = _boundary_mass(fine)
    return TimeAverageProfile(
        T, L, fine, "resolvent", leak, max(quad_err, 1e-12 * norm2), norm2,
        {"nodes": int(energies.size), "span": [float(a), float(b)], "tail_nodes": 2 * _TAIL_NODES,
         "tail_bound": float(tail_bound)},
    )


def quadrature_panels(H: TruncatedHamiltonian, t_max: float, panels: int = 24, per_panel_phase: float = 4.0) -> int:
    """Panel count: at least `panels`, and enough that each panel spans <= per_panel_phase radians of the fastest oscillation."""
    E = H.eigensystem[0]
    width = float(E[-1] - E[0])
    return max(panels, int(math.ceil(t_max * width / per_panel_phase)))


def time_average_quadrature(
    psi: WavePacket,
    spec: PotentialSpec,
    T: float,
    L: int,
    panels: int = 24,
    nodes: int = 8,
    chunk: int = 256,
) -> TimeAverageProfile:
    """Time-quadrature route on [0, t_max], t_max = (T/2) ln(1e10)."""
    if T <= 0:
        raise ValueError("T must be positive")
    H = truncated(spec, L, psi)
    t_max = T / 2 * math.log(1 / QUADRATURE_HORIZON)
    npan = quadrature_panels(H, t_max, panels)
    x, w = np.polynomial.legendre.leggauss(nodes)
    edges = np.linspace(0.0, t_max, npan + 1)
    half = np.diff(edges) / 2
    mid = (edges[:-1] + edges[1:]) / 2
    t = (mid[:, None] + half[:, None] * x[None, :]).ravel()
    wt = (half[:, None] * w[None, :]).ravel() * (2 / T) * np.exp(-2 * t / T)

    E, V = H.eigensystem
    c = V.T @ psi.dense(L)
    acc = np.zeros(H.size)
    for i in range(0, t.size, chunk):
        ph = np.exp(-1j * np.outer(E, t[i : i + chunk])) * c[:, None]
        amp = V @ ph
        acc += (np.abs(amp) ** 2) @ wt[i : i + chunk]
    norm2 = psi.norm2
    return TimeAverageProfile(
        T, L, acc, "time-quadrature", _boundary_mass(acc), QUADRATURE_HORIZON * norm2, norm2,
        {"panels": npan, "nodes": nodes, "t_max": t_max},
    )


def time_average_eigen_exact(psi: WavePacket, spec: PotentialSpec, T: float, L: int) -> TimeAverageProfile:
    """Closed-form time average in the eigenbasis (cost O(L^3), so L <= 300)."""
    if L > EIGEN_EXACT_MAX_L:
        raise ValueError(f"eigen-exact route limited to L <= {EIGEN_EXACT_MAX_L}")
    if T <= 0:
        raise ValueError("T must be positive")
    H = truncated(spec, L, psi)
    E, V = H.eigensystem
    c = V.T @ psi.dense(L)
    G = np.outer(c, c.conj()) / (1 + 0.5j * T * (E[:, None] - E[None, :]))
    vals = np.einsum("nj,jk,nk->n", V, G, V).real
    vals = np.maximum(vals, 0.0)
    norm2 = psi.norm2
    return TimeAverageProfile(T, L, vals, "eigen-exact", _boundary_mass(vals), 1e-12 * norm2, norm2)


METHODS = {
    "resolvent": time_average_resolvent,
    "time-quadrature": time_average_quadrature,
    "eigen-exact": time_average_eigen_exact,
}


def averaging_box(
    spec: PotentialSpec,
    psi: WavePacket,
    T: float,
    tol: float = 1e-6,
    margin: int = 16,
    L_max: int | None = None,
) -> int:
    """Box half-width for a time average at scale T.

    Ballistic spreading is at most speed 2, and the weight e^{-2t/T} then
    keeps the averaged mass beyond distance n below about e^{-n/T}; hence
    L = s + margin + T ln(1/tol), optionally capped at L_max (the boundary
    mass of the profile then measures the truncation).
    """
    L = psi.radius + margin + int(math.ceil(T * math.log(1 / tol)))
    return min(L, L_max) if L_max is not None else L


@dataclass(frozen=True)
class OutsideProbability:
    P_l: float
    P_r: float
    P: float
    error: float


def outside_probability(profile: TimeAverageProfile, N: int) -> OutsideProbability:
    """P_r = sum_{n >= N} a(n), P_l = sum_{n <= -N} a(n); both include n = 0 when N = 0."""
    N = int(math.ceil(N))
    if N > profile.L:
        raise ValueError("N exceeds the profile window")
    if N < 0:
        raise ValueError("N must be >= 0")
    L = profile.L
    v = profile.values
    P_r = float(v[N + L :].sum())
    P_l = float(v[: L - N + 1].sum())
    return OutsideProbability(P_l, P_r, P_l + P_r, profile.error_bar)


def moment(profile: TimeAverageProfile, p: float) -> float:
    """sum_n |n|^p a(n) over the window."""
    if p <= 0:
        raise ValueError("p must be positive")
    return float(np.sum(np.abs(profile.sites).astype(float) ** p * profile.values))


def moment_error(profile: TimeAverageProfile, p: float) -> float:
    return float(profile.L) ** p * profile.error_bar


@dataclass(frozen=True)
class MomentEntry:
    T: float
    p: float
    value: float
    err_bar: float
    method: str
    L: int
    meta: dict = field(default_factory=dict)


@dataclass
class MomentTable:
    entries: list = field(default_factory=list)

    def add(self, profile: TimeAverageProfile, p: float) -> MomentEntry:
        e = MomentEntry(profile.T, p, moment(profile, p), moment_error(profile, p), profile.method,
                        profile.L, dict(profile.meta))
        if not e.value > 0:
            raise ValueError("moment table entries must be positive")
        self.entries.append(e)
        return e

    def series(self, p: float) -> tuple[np.ndarray, np.ndarray]:
        rows = sorted((e.T, e.value) for e in self.entries if e.p == p)
        return np.array([r[0] for r in rows]), np.array([r[1] for r in rows])
