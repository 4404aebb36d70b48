"""Numerical laboratory for transport exponents of 1D discrete Schroedinger operators."""
__version__ = "0.1.0"

from .lattice import (
    ComplexEnergy,
    PotentialSpec,
    TruncatedHamiltonian,
    WavePacket,
    apply_hamiltonian,
    build_truncated,
    choose_box,
)

__all__ = [
    "ComplexEnergy",
    "PotentialSpec",
    "TruncatedHamiltonian",
    "WavePacket",
    "apply_hamiltonian",
    "build_truncated",
    "choose_box",
]
