"""Generators for the aperiodic potential families.

All generators are vectorised over integer site indices and deterministic:
the same parameters always produce the same values at every site, positive
or negative.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Callable

import numpy as np

GOLDEN_THETA = (np.sqrt(5.0) - 1.0) / 2.0

_SPLITTER = 134217729.0  # 2**27 + 1, Dekker split constant


def _two_product(a, b):
    """Error-free product: a*b == p + e exactly (Dekker/Veltkamp)."""
    p = a * b
    t = _SPLITTER * a
    a_hi = t - (t - a)
    a_lo = a - a_hi
    t = _SPLITTER * b
    b_hi = t - (t - b)
    b_lo = b - b_hi
    e = ((a_hi * b_hi - p) + a_hi * b_lo + a_lo * b_hi) + a_lo * b_lo
    return p, e


def _two_sum(a, b):
    s = a + b
    bb = s - a
    e = (a - (s - bb)) + (b - bb)
    return s, e


def compensated_floor(n, theta: float, omega: float = 0.0) -> np.ndarray:
    """floor(n*theta + omega) with the argument carried as a double-double.

    `n` are integers (|n| < 2**53).  The product and sum are formed with
    error-free transforms, so the floor is decided on the exact value of
    n*theta + omega rather than on its rounded double.
    """
    n = np.asarray(n, dtype=np.float64)
    p, e = _two_product(n, np.float64(theta))
    s, e2 = _two_sum(p, np.float64(omega))
    lo = e + e2
    hi = s + lo
    lo = lo - (hi - s)
    f = np.floor(hi)
    frac = (hi - f) + lo
    f = np.where(frac < 0.0, f - 1.0, f)
    f = np.where(frac >= 1.0, f + 1.0, f)
    return f


def sturmian_value(coupling: float, theta: float, phase: float, n) -> np.ndarray:
    """lambda * (floor((n+1) theta + omega) - floor(n theta + omega))."""
    n = np.asarray(n, dtype=np.int64)
    jumps = compensated_floor(n + 1, theta, phase) - compensated_floor(n, theta, phase)
    return coupling * jumps


def _cosine(x):
    return 2.0 * np.cos(2.0 * np.pi * x)


def _sqrt(x):
    return np.sqrt(x)


# name -> (function on [0,1), sup |f|)
SAMPLERS: dict[str, tuple[Callable[[np.ndarray], np.ndarray], float]] = {
    "cosine": (_cosine, 2.0),
    "sqrt": (_sqrt, 1.0),
}


def sampler_bound(name: str) -> float:
    try:
        return SAMPLERS[name][1]
    except KeyError:
        raise ValueError(f"unknown sampler {name!r}; known: {sorted(SAMPLERS)}") from None


def quasiperiodic_value(sampler: str, coupling: float, theta: float, phase: float, n) -> np.ndarray:
    """lambda * f(n theta + omega mod 1) for a named sampling function f."""
    if sampler not in SAMPLERS:
        raise ValueError(f"unknown sampler {sampler!r}; known: {sorted(SAMPLERS)}")
    f = SAMPLERS[sampler][0]
    n = np.asarray(n, dtype=np.float64)
    p, e = _two_product(n, np.float64(theta))
    x = np.mod(p + (e + phase), 1.0)
    # mod can return 1.0 after rounding of a tiny negative argument
    x = np.where(x >= 1.0, 0.0, x)
    return coupling * f(x)


@dataclass(frozen=True)
class SubstitutionRules:
    """A two-letter substitution 0 -> image0, 1 -> image1.

    The one-sided sequence is the fixed point grown from `seed`.  The left
    half-line is the left-infinite fixed point of S^2 grown from
    `left_seed` (placed at site -1); when `left_seed` is None the right half
    is mirrored, omega(-n) = omega(n-1).
    """

    image0: str
    image1: str
    seed: str = "0"
    left_seed: str | None = None

    def __post_init__(self):
        for w in (self.image0, self.image1):
            if not w or set(w) - {"0", "1"}:
                raise ValueError(f"substitution images must be non-empty 0/1 words, got {w!r}")
        if self.seed not in ("0", "1"):
            raise ValueError("seed symbol must be '0' or '1'")
        if not self.image(self.seed).startswith(self.seed):
            raise ValueError(f"S({self.seed}) must begin with {self.seed} for a fixed point to exist")
        if len(self.image(self.seed)) < 2:
            raise ValueError("S(seed) must have length >= 2 for the fixed point to grow")
        if self.left_seed is not None:
            if self.left_seed not in ("0", "1"):
                raise ValueError("left seed must be '0' or '1'")
            if not self.apply(self.apply(self.left_seed)).endswith(self.left_seed):
                raise ValueError(f"S^2({self.left_seed}) must end with {self.left_seed}")

    def image(self, symbol: str) -> str:
        return self.image0 if symbol == "0" else self.image1

    def apply(self, word: str) -> str:
        return "".join(self.image(c) for c in word)


PERIOD_DOUBLING = SubstitutionRules("01", "00", seed="0", left_seed="1")
THUE_MORSE = SubstitutionRules("01", "10", seed="0", left_seed=None)


@lru_cache(maxsize=64)
def _grown(rules: SubstitutionRules, start: str, power: int, min_length: int) -> str:
    word = start
    while len(word) < min_length:
        grown = word
        for _ in range(power):
            grown = rules.apply(grown)
        if len(grown) <= len(word):
            raise ValueError("substitution does not grow; no fixed point")
        word = grown
    return word


def _capacity(length: int) -> int:
    # round requests up so the lru cache is hit by nearby lengths
    return 1 << max(4, int(np.ceil(np.log2(max(length, 1)))))


def substitution_word(rules: SubstitutionRules, length: int) -> str:
    """First `length` symbols of the one-sided fixed point of `rules`."""
    if length < 1:
        raise ValueError("length must be >= 1")
    return _grown(rules, rules.seed, 1, _capacity(length))[:length]


def substitution_symbols(rules: SubstitutionRules, n) -> np.ndarray:
    """Two-sided symbol sequence omega_n (0/1 integers) at sites n."""
    n = np.asarray(n, dtype=np.int64)
    out = np.zeros(n.shape, dtype=np.int64)
    if n.size == 0:
        return out
    right = n >= 0
    if right.any():
        need = int(n[right].max()) + 1
        w = np.frombuffer(substitution_word(rules, need).encode(), dtype=np.uint8) - 48
        out[right] = w[n[right]]
    left = ~right
    if left.any():
        depth = int(-n[left].min())
        if rules.left_seed is None:
            w = np.frombuffer(substitution_word(rules, depth).encode(), dtype=np.uint8) - 48
            out[left] = w[-n[left] - 1]
        else:
            word = _grown(rules, rules.left_seed, 2, _capacity(depth))
            w = np.frombuffer(word.encode(), dtype=np.uint8) - 48
            out[left] = w[len(w) + n[left]]
    return out


def _choices(seed: int, side: int, count: int, p: float) -> np.ndarray:
    """Bernoulli block choices (True = '+') on one side of the origin.

    Drawn in fixed chunks with independently seeded generators so the
    value of choice l never depends on how many were requested.
    """
    chunk = 1024
    nchunks = (count + chunk - 1) // chunk
    parts = [
        np.random.default_rng([seed, side, c]).random(chunk) < p for c in range(nchunks)
    ]
    return np.concatenate(parts)[:count] if parts else np.zeros(0, dtype=bool)


def polymer_sequence(block_plus, block_minus, p: float, seed: int, n) -> np.ndarray:
    """Random polymer potential at sites n.

    Blocks omega_0, omega_1, ... fill sites 0, 1, ... with omega_0 starting
    exactly at site 0; blocks omega_{-1}, omega_{-2}, ... fill the negative
    sites leftwards.
    """
    bp = np.asarray(block_plus, dtype=float)
    bm = np.asarray(block_minus, dtype=float)
    if bp.size == 0 or bm.size == 0:
        raise ValueError("polymer blocks must be non-empty")
    if not 0.0 < p < 1.0:
        raise ValueError("Bernoulli parameter must lie in (0, 1)")
    n = np.asarray(n, dtype=np.int64)
    out = np.zeros(n.shape, dtype=float)
    if n.size == 0:
        return out
    lmin = min(bp.size, bm.size)
    for side, mask in ((0, n >= 0), (1, n < 0)):
        if not mask.any():
            continue
        reach = int(n[mask].max()) + 1 if side == 0 else int(-n[mask].min())
        nblocks = reach // lmin + 2
        picks = _choices(seed, side, nblocks, p)
        seq = np.concatenate([bp if c else bm for c in picks])
        if side == 0:
            out[mask] = seq[n[mask]]
        else:
            # seq[0] is the site just left of the origin, read right-to-left
            rev = np.concatenate([(bp if c else bm)[::-1] for c in picks])
            out[mask] = rev[-n[mask] - 1]
    return out
