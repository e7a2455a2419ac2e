"""Post-quench evolution and time-averaged spin polarizations.

Because the five gamma matrices anticommute, H^2 = E^2 and the propagator
is exactly ``cos(Et) - i sin(Et) H/E``. Infinite-time averages follow from
the band projectors ``P_pm = (1 pm H/E)/2``; for any initial polarization
``p0`` they collapse to ``hhat_j * (hhat . p0)``, so a deep quench along
gamma_i gives ``h_i h_j / E^2``.

Time units: ``evolve_polarization`` takes the bare evolution time (phase
``E t``). Measurement windows (``t_max``, :class:`DephasingModel`) are on
the experiment clock, where the Hamiltonian is in frequency units and the
phase is ``2 pi E t``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from . import kernels
from .model import GAMMA, ModelParams, build_hamiltonian, h_vector
from .prep import PreQuenchSpec, init_state, init_state_batch, prequench_h

#: evolution phase per unit of experiment-clock time, in units of E
CLOCK_PHASE = 2 * math.pi

#: default sample count for windowed averages
N_SAMPLES = 64


class GapClosedWarning(RuntimeWarning):
    pass


# quench description shared with prep: axis in 0..3, depth m_i (inf = deep)
QuenchSpec = PreQuenchSpec


@dataclass(frozen=True)
class DephasingModel:
    """Phenomenological damping of the oscillating part of each channel.

    ``rate_fast`` acts on gamma_1, gamma_2 (electron coherence),
    ``rate_slow`` on gamma_0, gamma_3, gamma_4. Rates are per unit of
    clock time; ``window`` is (t_start, t_end) on the same clock.
    """

    rate_fast: float = 0.0
    rate_slow: float = 0.0
    window: tuple = (0.0, 1.0)

    def __post_init__(self):
        if self.rate_fast < 0 or self.rate_slow < 0:
            raise ValueError("damping rates must be nonnegative")
        t0, t1 = self.window
        if not (t1 > t0 >= 0):
            raise ValueError(f"window must satisfy t_end > t_start >= 0, got {self.window}")

    @property
    def rates(self) -> np.ndarray:
        s, f = self.rate_slow, self.rate_fast
        return np.array([s, f, f, s, s])


def _check_state(psi) -> np.ndarray:
    psi = np.asarray(psi, dtype=complex)
    if psi.shape[-1] != 4:
        raise ValueError(f"state must have 4 components, got shape {psi.shape}")
    norms = np.linalg.norm(psi, axis=-1)
    if not np.allclose(norms, 1.0, atol=1e-9):
        raise ValueError("initial state is not normalized")
    return psi


def polarization(psi) -> np.ndarray:
    """<gamma_j> of state(s) ``psi`` (..., 4) -> (..., 5)."""
    psi = np.asarray(psi, dtype=complex)
    return np.einsum("...a,jab,...b->...j", psi.conj(), GAMMA, psi).real


def evolve_polarization(k, p: ModelParams, init, t: float) -> np.ndarray:
    """<gamma_j(t)> after evolving ``init`` under H(k) for time ``t``."""
    psi = _check_state(init)
    h = h_vector(k, p)
    return kernels.evolve_batch(h[None, :], psi[None, :], np.array([float(t)]))[0]


def dense_evolution_oracle(k, p: ModelParams, init, t: float) -> np.ndarray:
    """Same observable via eigendecomposition of the dense 4x4 matrix."""
    psi = _check_state(init)
    H = build_hamiltonian(h_vector(k, p))
    w, v = np.linalg.eigh(H)
    U = (v * np.exp(-1j * w * t)) @ v.conj().T
    return polarization(U @ psi)


def quench_state(k, p: ModelParams, q: QuenchSpec) -> np.ndarray:
    """Initial state for quench ``q`` at a single momentum."""
    return init_state(k, p, q)


def initial_polarization_batch(k, p: ModelParams, q: QuenchSpec) -> np.ndarray:
    """Polarization of the prepared initial state, vectorized over momenta.

    The prepared state is the upper eigenstate of H_pre, so its polarization
    is the unit vector of h_pre.
    """
    h_pre = prequench_h(k, p, q)
    n = np.linalg.norm(h_pre, axis=-1, keepdims=True)
    if np.any(n == 0):
        raise ValueError("pre-quench Hamiltonian vanishes at some momentum")
    return h_pre / n


def time_avg_polarization(k, p: ModelParams, q: QuenchSpec) -> np.ndarray:
    """Infinite-time average of <gamma_j> from the band projectors.

    At a gap-closing momentum (E = 0) nothing oscillates; the initial
    polarization is returned and a :class:`GapClosedWarning` is emitted.
    """
    psi = quench_state(k, p, q)
    h = h_vector(k, p)
    E = float(np.linalg.norm(h))
    if E == 0.0:
        warnings.warn(f"gap closed at k = {np.asarray(k).tolist()}", GapClosedWarning, stacklevel=2)
        return polarization(psi)
    Hhat = build_hamiltonian(h / E)
    eye = np.eye(4)
    out = np.zeros(5)
    for sign in (1.0, -1.0):
        P = 0.5 * (eye + sign * Hhat)
        phi = P @ psi
        out += np.einsum("a,jab,b->j", phi.conj(), GAMMA, phi).real
    return out


def time_avg_batch(k, p: ModelParams, q: QuenchSpec) -> np.ndarray:
    """Vectorized infinite-time averages, ``hhat * (hhat . p0)``."""
    h = h_vector(k, p)
    p0 = initial_polarization_batch(k, p, q)
    E = np.linalg.norm(h, axis=-1, keepdims=True)
    gapped = E > 0
    hhat = np.divide(h, E, out=np.zeros_like(h), where=gapped)
    avg = hhat * np.sum(hhat * p0, axis=-1, keepdims=True)
    return np.where(gapped, avg, p0)


def averaged_density_batch(k, p: ModelParams, q: QuenchSpec) -> np.ndarray:
    """Dephased density matrix (rho + H rho H / E^2) / 2 per momentum."""
    h = h_vector(k, p)
    psi = init_state_batch(prequench_h(k, p, q))
    rho = np.einsum("...a,...b->...ab", psi, psi.conj())
    E = np.linalg.norm(h, axis=-1)
    safe = np.where(E > 0, E, 1.0)
    Hhat = build_hamiltonian(h / safe[..., None])
    mixed = 0.5 * (rho + Hhat @ rho @ Hhat)
    return np.where((E > 0)[..., None, None], mixed, rho)


def t_max(p: ModelParams) -> float:
    """Upper end of the undephased averaging window (experiment clock).

    ``2 / (sqrt(3) t_so sin(arccos(m_z / (3 t_0))))``, i.e. 2 / E at the
    band inversion surface on the [111] diagonal. The polarization there
    oscillates at 2E, so the window holds four full periods.
    """
    x = p.m_z / (3 * p.t_0)
    if not -1 < x < 1:
        raise ValueError(f"t_max needs |m_z| < 3 t_0, got m_z = {p.m_z}")
    return 2.0 / (math.sqrt(3) * p.t_so * math.sin(math.acos(x)))


def window_times(window, n_samples: int = N_SAMPLES) -> np.ndarray:
    t0, t1 = window
    if n_samples < 2:
        raise ValueError("need at least two time samples")
    if not t1 > t0:
        raise ValueError(f"empty averaging window {window}")
    return np.linspace(t0, t1, n_samples)


def windowed_avg_batch(k, p: ModelParams, q: QuenchSpec, d: DephasingModel, n_samples: int = N_SAMPLES):
    k = np.asarray(k, dtype=float)
    lead = k.shape[:-1]
    kk = k.reshape(-1, 3)
    h = h_vector(kk, p)
    psi = init_state_batch(prequench_h(kk, p, q))
    times = window_times(d.window, n_samples)
    out = kernels.windowed_average_batch(h, psi, times, d.rates, CLOCK_PHASE)
    return out.reshape(lead + (5,))


def windowed_avg_polarization(
    k, p: ModelParams, q: QuenchSpec, d: DephasingModel, n_samples: int = N_SAMPLES
) -> np.ndarray:
    """Average of damped <gamma_j(t)> over ``n_samples`` uniform clock times."""
    return windowed_avg_batch(np.asarray(k, dtype=float)[None, :], p, q, d, n_samples)[0]


def polarization_series(k, p: ModelParams, q: QuenchSpec, times, clock: bool = True) -> np.ndarray:
    """<gamma_j(t)> at each of ``times`` -> (T, 5)."""
    times = np.asarray(times, dtype=float)
    psi = quench_state(k, p, q)
    h = h_vector(k, p)
    scale = CLOCK_PHASE if clock else 1.0
    hh = np.broadcast_to(h, (times.size, 5))
    pp = np.broadcast_to(psi, (times.size, 4))
    return kernels.evolve_batch(hh, pp, scale * times)


class ExactAverager:
    """Infinite-time averages; the default measurement model."""

    def __call__(self, k, p: ModelParams, q: QuenchSpec) -> np.ndarray:
        return time_avg_batch(k, p, q)


class WindowedAverager:
    """Finite-window sampled averages with optional dephasing."""

    def __init__(self, dephasing: DephasingModel, n_samples: int = N_SAMPLES):
        self.dephasing = dephasing
        self.n_samples = n_samples

    def __call__(self, k, p: ModelParams, q: QuenchSpec) -> np.ndarray:
        return windowed_avg_batch(k, p, q, self.dephasing, self.n_samples)

    @classmethod
    def dephased(cls, p: ModelParams, rate_fast: float = 2.0, rate_slow: float = 0.05, n_samples=N_SAMPLES):
        """The late window [2 t_max, 3 t_max] with damping switched on."""
        tm = t_max(p)
        return cls(DephasingModel(rate_fast, rate_slow, (2 * tm, 3 * tm)), n_samples)

    @classmethod
    def early(cls, p: ModelParams, n_samples=N_SAMPLES):
        """The undamped window [0, t_max]."""
        return cls(DephasingModel(0.0, 0.0, (0.0, t_max(p))), n_samples)
