"""Bloch Hamiltonian of the 3D chiral (class AIII) insulator.

H(k) = sum_j h_j(k) gamma_j with

    h_0 = m_z - t_0 (cos kx + cos ky + cos kz)
    h_{1,2,3} = t_so (sin kx, sin ky, sin kz)
    h_4 = constant chiral-symmetry-breaking term

Momenta are arrays with a trailing axis of length 3 and live in the
half-open zone [-pi, pi). Energies are in units of t_0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_s0 = np.eye(2, dtype=complex)
_sx = np.array([[0, 1], [1, 0]], dtype=complex)
_sy = np.array([[0, -1j], [1j, 0]], dtype=complex)
_sz = np.array([[1, 0], [0, -1]], dtype=complex)

PAULI = (_s0, _sx, _sy, _sz)

#: gamma_0..gamma_4; the first factor acts on the electron spin (sigma),
#: the second on the nuclear spin (tau). This ordering indexes every
#: polarization vector in the package.
GAMMA = np.array(
    [
        np.kron(_sz, _sz),
        np.kron(_sx, _s0),
        np.kron(_sy, _s0),
        np.kron(_sz, _sx),
        np.kron(_sz, _sy),
    ]
)

#: m_z / t_0 values where the bulk gap closes
PHASE_BOUNDARIES = (-3.0, -1.0, 1.0, 3.0)


class GapClosedError(ValueError):
    """Raised when the bulk gap closes (phase boundary or E(k) = 0)."""


@dataclass(frozen=True)
class ModelParams:
    m_z: float = 1.4
    t_0: float = 1.0
    t_so: float = 0.2
    h_4: float = 0.0

    def __post_init__(self):
        if not self.t_0 > 0:
            raise ValueError(f"t_0 must be positive, got {self.t_0}")
        if not self.t_so > 0:
            raise ValueError(f"t_so must be positive, got {self.t_so}")
        for name in ("m_z", "h_4"):
            if not np.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")

    def replace(self, **changes) -> "ModelParams":
        fields = dict(m_z=self.m_z, t_0=self.t_0, t_so=self.t_so, h_4=self.h_4)
        fields.update(changes)
        return ModelParams(**fields)


def wrap_momentum(k) -> np.ndarray:
    """Map momenta into [-pi, pi) componentwise."""
    k = np.asarray(k, dtype=float)
    w = np.mod(k + np.pi, 2 * np.pi) - np.pi
    # values a hair below +pi round to +pi after the mod; fold them over
    w = np.where(w >= np.pi, w - 2 * np.pi, w)
    return w


def h_vector(k, p: ModelParams) -> np.ndarray:
    """The five h-components at momenta ``k`` (shape ``(..., 3)``) -> ``(..., 5)``."""
    k = np.asarray(k, dtype=float)
    if k.shape[-1] != 3:
        raise ValueError(f"momentum needs a trailing axis of length 3, got shape {k.shape}")
    h = np.empty(k.shape[:-1] + (5,))
    h[..., 0] = p.m_z - p.t_0 * np.cos(k).sum(axis=-1)
    h[..., 1:4] = p.t_so * np.sin(k)
    h[..., 4] = p.h_4
    return h


def energy(h) -> np.ndarray:
    """Band energy E = |h| (the spectrum is +-E, each twice)."""
    return np.linalg.norm(np.asarray(h, dtype=float), axis=-1)


def grad_h0(k, p: ModelParams) -> np.ndarray:
    """Momentum gradient of h_0; the band inversion surface normal direction."""
    return p.t_0 * np.sin(np.asarray(k, dtype=float))


def build_hamiltonian(h) -> np.ndarray:
    """sum_j h_j gamma_j for ``h`` of shape ``(..., 5)`` -> ``(..., 4, 4)``."""
    h = np.asarray(h, dtype=float)
    return np.einsum("...j,jab->...ab", h, GAMMA)


def chiral_residual(p: ModelParams, k) -> float:
    """Spectral norm of {H(k), gamma_4}; equals 2|h_4|."""
    H = build_hamiltonian(h_vector(k, p))
    anti = H @ GAMMA[4] + GAMMA[4] @ H
    return float(np.linalg.norm(anti, 2))


def equilibrium_winding(p: ModelParams, atol: float = 1e-12) -> int:
    """3D winding number nu_3 of the occupied bands.

    +1 for t_0 < |m_z| < 3 t_0, -2 for |m_z| < t_0, 0 beyond 3 t_0.
    """
    if p.h_4 != 0:
        raise ValueError("winding number is only defined with chiral symmetry (h_4 = 0)")
    m = p.m_z / p.t_0
    for b in PHASE_BOUNDARIES:
        if abs(m - b) <= atol:
            raise GapClosedError(f"m_z = {p.m_z} sits on the phase boundary {b} t_0")
    a = abs(m)
    if a < 1:
        return -2
    if a < 3:
        return 1
    return 0
