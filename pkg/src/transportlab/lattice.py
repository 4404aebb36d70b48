"""Core lattice types: potentials, wave packets, truncated Hamiltonians.

The Hamiltonian acts on l^2(Z) as

    (H psi)(n) = psi(n+1) + psi(n-1) + W(n) psi(n)

and is restricted to boxes [-L, L] with Dirichlet boundaries for numerics.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.linalg import eigh_tridiagonal

from . import potentials as pot

KINDS = ("sturmian", "quasiperiodic", "substitution", "polymer", "constant", "table")


@dataclass(frozen=True)
class PotentialSpec:
    """Tagged description of a potential W: Z -> R.

    Only the fields relevant to `kind` are used:

    * sturmian      -- coupling, theta, phase
    * quasiperiodic -- coupling, theta, phase, sampler
    * substitution  -- coupling, rules (W(n) = coupling * omega_n)
    * polymer       -- block_plus, block_minus, bernoulli, rng_seed
    * constant      -- constant
    * table         -- table, table_offset (zero outside the table)
    """

    kind: str
    coupling: float = 0.0
    theta: float = pot.GOLDEN_THETA
    phase: float = 0.0
    sampler: str = "cosine"
    rules: pot.SubstitutionRules | None = None
    block_plus: tuple[float, ...] = ()
    block_minus: tuple[float, ...] = ()
    bernoulli: float = 0.5
    rng_seed: int = 0
    constant: float = 0.0
    table: tuple[float, ...] = ()
    table_offset: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown potential kind {self.kind!r}")
        if self.coupling < 0:
            raise ValueError("coupling must be >= 0")
        if self.kind in ("sturmian", "quasiperiodic") and not 0.0 < self.theta < 1.0:
            raise ValueError("theta must lie in (0, 1)")
        if not 0.0 <= self.phase < 1.0:
            raise ValueError("phase must lie in [0, 1)")
        if self.kind == "quasiperiodic":
            pot.sampler_bound(self.sampler)
        if self.kind == "substitution" and self.rules is None:
            raise ValueError("substitution potential needs rules")
        if self.kind == "polymer":
            if not self.block_plus or not self.block_minus:
                raise ValueError("polymer potential needs two non-empty blocks")
            if not 0.0 < self.bernoulli < 1.0:
                raise ValueError("bernoulli parameter must lie in (0, 1)")
        # normalise sequences to tuples so the object stays hashable
        for name in ("block_plus", "block_minus", "table"):
            object.__setattr__(self, name, tuple(float(x) for x in getattr(self, name)))

    @property
    def bound(self) -> float:
        """B = sup_n |W(n)| (an upper bound for the table/polymer cases is exact)."""
        k = self.kind
        if k in ("sturmian", "substitution"):
            return float(self.coupling)
        if k == "quasiperiodic":
            return float(self.coupling * pot.sampler_bound(self.sampler))
        if k == "polymer":
            return float(max(np.abs(self.block_plus).max(), np.abs(self.block_minus).max()))
        if k == "constant":
            return abs(float(self.constant))
        return float(np.abs(self.table).max()) if self.table else 0.0

    def values(self, n) -> np.ndarray:
        """W(n) for an integer or array of integers."""
        n = np.asarray(n, dtype=np.int64)
        k = self.kind
        if k == "sturmian":
            return pot.sturmian_value(self.coupling, self.theta, self.phase, n)
        if k == "quasiperiodic":
            return pot.quasiperiodic_value(self.sampler, self.coupling, self.theta, self.phase, n)
        if k == "substitution":
            return self.coupling * pot.substitution_symbols(self.rules, n).astype(float)
        if k == "polymer":
            return pot.polymer_sequence(self.block_plus, self.block_minus, self.bernoulli, self.rng_seed, n)
        if k == "constant":
            return np.full(n.shape, float(self.constant))
        tab = np.asarray(self.table, dtype=float)
        idx = n - self.table_offset
        inside = (idx >= 0) & (idx < tab.size)
        out = np.zeros(n.shape, dtype=float)
        out[inside] = tab[idx[inside]]
        return out

    def __call__(self, n) -> float | np.ndarray:
        v = self.values(n)
        return float(v) if v.ndim == 0 else v

    def window(self, lo: int, hi: int) -> np.ndarray:
        """W(lo), ..., W(hi) inclusive."""
        return self.values(np.arange(lo, hi + 1))

    @classmethod
    def free(cls) -> "PotentialSpec":
        return cls("constant", constant=0.0)

    @classmethod
    def fibonacci(cls, coupling: float, phase: float = 0.0) -> "PotentialSpec":
        return cls("sturmian", coupling=coupling, theta=pot.GOLDEN_THETA, phase=phase)

    @classmethod
    def almost_mathieu(cls, coupling: float, theta: float = pot.GOLDEN_THETA, phase: float = 0.0):
        return cls("quasiperiodic", coupling=coupling, theta=theta, phase=phase, sampler="cosine")

    @classmethod
    def thue_morse(cls, coupling: float) -> "PotentialSpec":
        return cls("substitution", coupling=coupling, rules=pot.THUE_MORSE)

    @classmethod
    def period_doubling(cls, coupling: float) -> "PotentialSpec":
        return cls("substitution", coupling=coupling, rules=pot.PERIOD_DOUBLING)

    @classmethod
    def dimer(cls, coupling: float, p: float = 0.5, seed: int = 0) -> "PotentialSpec":
        return cls(
            "polymer",
            block_plus=(coupling, coupling),
            block_minus=(-coupling, -coupling),
            bernoulli=p,
            rng_seed=seed,
        )


@dataclass(frozen=True, eq=False)
class WavePacket:
    """Finitely stored state psi with psi(offset + i) = coefficients[i].

    `decay` = (D, a) declares |psi(n)| <= D exp(-a |n|).
    """

    offset: int
    coefficients: np.ndarray
    decay: tuple[float, float] | None = None

    def __post_init__(self):
        c = np.atleast_1d(np.asarray(self.coefficients, dtype=complex)).copy()
        c.setflags(write=False)
        object.__setattr__(self, "coefficients", c)
        object.__setattr__(self, "offset", int(self.offset))
        if c.size == 0 or not np.any(c != 0):
            raise ValueError("wave packet must have non-zero norm")
        if self.decay is not None:
            D, a = self.decay
            if D <= 0 or a <= 0:
                raise ValueError("decay constants D, a must be positive")
            n = self.sites
            if np.any(np.abs(c) > D * np.exp(-a * np.abs(n)) * (1 + 1e-12)):
                raise ValueError("coefficients violate the declared exponential decay")

    @classmethod
    def delta(cls, n: int = 0) -> "WavePacket":
        return cls(n, np.array([1.0]))

    @classmethod
    def from_sites(cls, values: dict[int, complex]) -> "WavePacket":
        lo, hi = min(values), max(values)
        c = np.zeros(hi - lo + 1, dtype=complex)
        for n, v in values.items():
            c[n - lo] = v
        return cls(lo, c)

    @property
    def sites(self) -> np.ndarray:
        return np.arange(self.offset, self.offset + self.coefficients.size)

    @property
    def norm2(self) -> float:
        return float(np.sum(np.abs(self.coefficients) ** 2))

    @property
    def support(self) -> tuple[int, int]:
        """(first, last) sites carrying a non-zero coefficient."""
        nz = np.flatnonzero(self.coefficients)
        return self.offset + int(nz[0]), self.offset + int(nz[-1])

    @property
    def radius(self) -> int:
        """Smallest s with supp(psi) inside [-s, s]."""
        lo, hi = self.support
        return max(abs(lo), abs(hi))

    def __call__(self, n: int) -> complex:
        i = n - self.offset
        if 0 <= i < self.coefficients.size:
            return complex(self.coefficients[i])
        return 0j

    def dense(self, L: int) -> np.ndarray:
        """Coefficients on the box [-L, L] (index n + L)."""
        lo, hi = self.support
        if lo < -L or hi > L:
            raise ValueError(f"support [{lo}, {hi}] does not fit in the box [-{L}, {L}]")
        out = np.zeros(2 * L + 1, dtype=complex)
        for n, v in zip(self.sites, self.coefficients):
            if v != 0:
                out[n + L] = v
        return out

    @classmethod
    def from_dense(cls, vec: np.ndarray, L: int) -> "WavePacket":
        return cls(-L, np.asarray(vec, dtype=complex))

    def __add__(self, other: "WavePacket") -> "WavePacket":
        lo = min(self.offset, other.offset)
        hi = max(self.offset + self.coefficients.size, other.offset + other.coefficients.size)
        c = np.zeros(hi - lo, dtype=complex)
        c[self.offset - lo : self.offset - lo + self.coefficients.size] += self.coefficients
        c[other.offset - lo : other.offset - lo + other.coefficients.size] += other.coefficients
        return WavePacket(lo, c)

    def scaled(self, x: complex) -> "WavePacket":
        return WavePacket(self.offset, x * self.coefficients)


@dataclass(frozen=True)
class ComplexEnergy:
    """z = E + i eps with eps >= 0 (eps = 1/T in the time-averaged setting)."""

    E: float
    eps: float = 0.0

    def __post_init__(self):
        if self.eps < 0:
            raise ValueError("imaginary part must be >= 0")

    @property
    def z(self) -> complex:
        return complex(self.E, self.eps)

    @classmethod
    def from_time(cls, E: float, T: float) -> "ComplexEnergy":
        return cls(E, 1.0 / T)


@dataclass(frozen=True, eq=False)
class TruncatedHamiltonian:
    """H restricted to [-L, L]; off-diagonal entries are 1."""

    L: int
    diagonal: np.ndarray

    @property
    def size(self) -> int:
        return 2 * self.L + 1

    @property
    def sites(self) -> np.ndarray:
        return np.arange(-self.L, self.L + 1)

    @cached_property
    def eigensystem(self) -> tuple[np.ndarray, np.ndarray]:
        """(energies, eigenvectors as columns), computed once per instance."""
        return eigh_tridiagonal(self.diagonal, np.ones(self.size - 1))

    def matvec(self, v: np.ndarray) -> np.ndarray:
        out = self.diagonal * v
        out[:-1] += v[1:]
        out[1:] += v[:-1]
        return out

    def dense_matrix(self) -> np.ndarray:
        return np.diag(self.diagonal) + np.eye(self.size, k=1) + np.eye(self.size, k=-1)


def apply_hamiltonian(state: WavePacket, spec: PotentialSpec) -> WavePacket:
    c = state.coefficients
    out = np.zeros(c.size + 2, dtype=complex)
    out[2:] += c          # psi(n-1) contributes to site n
    out[:-2] += c         # psi(n+1) contributes to site n
    out[1:-1] += spec.values(state.sites) * c
    # the outermost entries equal the outermost psi values, so out != 0
    return WavePacket(state.offset - 1, out)


def build_truncated(spec: PotentialSpec, L: int, state: WavePacket | None = None) -> TruncatedHamiltonian:
    if L < 1:
        raise ValueError("box half-width must be >= 1")
    if state is not None:
        lo, hi = state.support
        if lo < -L or hi > L:
            raise ValueError(f"box [-{L}, {L}] does not contain the support [{lo}, {hi}]")
    return TruncatedHamiltonian(L, spec.window(-L, L))


def choose_box(
    spec: PotentialSpec,
    state: WavePacket,
    t_max: float,
    tol: float = 1e-10,
    c_box: float = 1.5,
    margin: int = 16,
) -> int:
    """Half-width L so that evolution up to t_max leaks at most `tol` past |n| = L-2.

    L = ceil(c_box (2+B) t_max ln(1/tol_scale)) + s + margin with
    tol_scale = tol**(1/10).  The amplitude at distance n is bounded by
    ((2+B) e t / n)^n, so a speed factor c_box ln(1/tol_scale) > e makes
    the tail decay geometrically; the margin covers short times.
    """
    if t_max <= 0 or tol <= 0:
        raise ValueError("t_max and tol must be positive")
    log_scale = max(math.log(1.0 / tol) / 10.0, 1.0)
    front = math.ceil(c_box * (2.0 + spec.bound) * t_max * log_scale)
    return front + state.radius + margin
