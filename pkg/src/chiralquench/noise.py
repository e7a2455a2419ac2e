"""Photon shot-noise emulation, population readout and Monte Carlo errors.

Each readout of <gamma_j> rotates the measured component onto the z basis
of both spins and then records photoluminescence counts for four pulse
sequences (no pulse, MW, RF0, MW + RF0). The counts are linear in the four
populations through the calibration design matrix

    N1 N2 N3 N4
    N3 N4 N1 N2
    N2 N1 N3 N4
    N3 N4 N2 N1

and carry normal noise with variance equal to the mean. The populations
are recovered by a linear solve and mapped to the polarization.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .dynamics import CLOCK_PHASE, N_SAMPLES, QuenchSpec, averaged_density_batch, window_times
from .model import PAULI, ModelParams, build_hamiltonian, h_vector
from .prep import init_state_batch, prequench_h

N_RANGE = (1000.0, 2000.0)
REPETITIONS = 10000
MIN_TRIALS = 100

#: z-basis sign patterns over (|00>, |01>, |10>, |11>)
SIGNS_ZZ = np.array([1.0, -1.0, -1.0, 1.0])
SIGNS_Z1 = np.array([1.0, 1.0, -1.0, -1.0])
READOUT_SIGNS = np.array([SIGNS_ZZ, SIGNS_Z1, SIGNS_Z1, SIGNS_ZZ, SIGNS_ZZ])


class SingularDesignError(ValueError):
    pass


class PopulationError(ValueError):
    pass


def _half_pi(axis: np.ndarray, sign: float) -> np.ndarray:
    return (np.eye(2) - 1j * sign * axis) / math.sqrt(2)


def _readout_unitaries() -> np.ndarray:
    """U_j with U_j^dag Z_j U_j = gamma_j, Z_j the z-basis observable of channel j.

    gamma_1, gamma_2: electron pi/2 about -y / x. gamma_3, gamma_4:
    nuclear pi/2 about -y / x.
    """
    s0, sx, sy, _ = PAULI
    ry = _half_pi(sy, -1.0)  # about -y
    rx = _half_pi(sx, 1.0)  # about x
    return np.array(
        [
            np.eye(4),
            np.kron(ry, s0),
            np.kron(rx, s0),
            np.kron(s0, ry),
            np.kron(s0, rx),
        ]
    )


READOUT_U = _readout_unitaries()


@dataclass(frozen=True)
class PhotonCalibration:
    """Mean photon counts N_1..N_4 of the four basis levels for ``repetitions`` shots."""

    N: tuple
    repetitions: int = REPETITIONS

    def __post_init__(self):
        N = tuple(float(x) for x in self.N)
        if len(N) != 4 or any(not x > 0 for x in N):
            raise ValueError(f"need four positive photon counts, got {self.N}")
        if self.repetitions < 1:
            raise ValueError("repetitions must be positive")
        object.__setattr__(self, "N", N)

    @classmethod
    def draw(cls, rng: np.random.Generator, n_range=N_RANGE, repetitions: int = REPETITIONS):
        lo, hi = n_range
        return cls(tuple(rng.uniform(lo, hi, 4)), repetitions)

    def scaled(self, repetitions: int) -> "PhotonCalibration":
        """Same detector, different shot count; counts scale linearly."""
        f = repetitions / self.repetitions
        return PhotonCalibration(tuple(n * f for n in self.N), repetitions)

    def design(self) -> np.ndarray:
        return design_matrix(self.N)

    def condition_number(self) -> float:
        return float(np.linalg.cond(self.design()))


def design_matrix(N) -> np.ndarray:
    n1, n2, n3, n4 = N
    return np.array(
        [
            [n1, n2, n3, n4],
            [n3, n4, n1, n2],
            [n2, n1, n3, n4],
            [n3, n4, n2, n1],
        ],
        dtype=float,
    )


def expected_counts(populations, cal: PhotonCalibration) -> np.ndarray:
    """Noise-free counts of the (no-pulse, MW, RF0, MW+RF0) sequences."""
    P = np.asarray(populations, dtype=float)
    if np.any(P < -1e-12):
        raise PopulationError("populations must be nonnegative")
    if np.any(np.abs(P.sum(axis=-1) - 1.0) > 1e-9):
        raise PopulationError("populations must sum to 1")
    return P @ cal.design().T


def solve_populations(counts, cal: PhotonCalibration, clip: bool = True):
    """Invert the design; returns (populations, clip magnitude per readout).

    With ``clip`` the solution is clipped to [0, 1] and renormalized; the
    magnitude is the L1 distance moved by the clip.
    """
    D = cal.design()
    det = np.linalg.det(D)
    if abs(det) < 1e-9 * np.prod(cal.N) or not np.isfinite(np.linalg.cond(D)):
        raise SingularDesignError(f"design matrix is singular for N = {cal.N}")
    counts = np.asarray(counts, dtype=float)
    P = np.linalg.solve(D, counts.reshape(-1, 4).T).T.reshape(counts.shape)
    if not clip:
        return P, np.zeros(P.shape[:-1])
    Pc = np.clip(P, 0.0, 1.0)
    mag = np.sum(np.abs(P - Pc), axis=-1)
    tot = Pc.sum(axis=-1, keepdims=True)
    Pc = np.where(tot > 0, Pc / np.where(tot > 0, tot, 1.0), 0.25)
    return Pc, mag


def population_covariance(populations, cal: PhotonCalibration) -> np.ndarray:
    """First-order covariance of the solved populations: D^-1 diag(c) D^-T."""
    c = expected_counts(populations, cal)
    Dinv = np.linalg.inv(cal.design())
    return np.einsum("ia,...a,ja->...ij", Dinv, c, Dinv)


def readout_populations(rho, j: int) -> np.ndarray:
    """z-basis populations after the channel-j readout rotation."""
    U = READOUT_U[j]
    r = U @ np.asarray(rho) @ U.conj().T
    return np.clip(np.real(np.diagonal(r, axis1=-2, axis2=-1)), 0.0, None)


def polarization_std_linear(populations_t, cal: PhotonCalibration, j: int) -> float:
    """Std of the time-averaged <gamma_j> from linear propagation.

    ``populations_t`` holds the (T, 4) noise-free readout populations of
    the sampled times; the estimate is the mean of T independent solves.
    """
    P = np.atleast_2d(populations_t)
    cov = population_covariance(P / P.sum(axis=-1, keepdims=True), cal)
    s = READOUT_SIGNS[j]
    var = np.einsum("i,tij,j->t", s, cov, s)
    return float(math.sqrt(var.sum()) / len(P))


# --------------------------------------------------------------------------
# count emulation
# --------------------------------------------------------------------------


def noisy_counts(mean, rng: np.random.Generator, mode: str = "normal") -> np.ndarray:
    mean = np.asarray(mean, dtype=float)
    if mode == "normal":
        return mean + np.sqrt(mean) * rng.standard_normal(mean.shape)
    if mode == "poisson":
        return rng.poisson(mean).astype(float)
    raise ValueError(f"unknown noise mode {mode!r}")


@dataclass
class ReadoutEmulator:
    """Emulated population readout of every sampled time of a window.

    ``cal`` holds the true level counts. With ``calibration_noise`` the
    analysis solves with N_1..N_4 re-measured under the same shot noise
    (one calibration per call); otherwise it uses the true values.
    """

    cal: PhotonCalibration
    n_time: int = N_SAMPLES
    mode: str = "normal"
    calibration_noise: bool = True

    def _solve_cal(self, rng):
        return measured_calibration(self.cal, rng, self.mode) if self.calibration_noise else self.cal

    def measure_populations(self, populations, rng: np.random.Generator, j: int = 0):
        """Noisy polarizations from exact readout populations (..., 4)."""
        c = expected_counts(populations, self.cal)
        P, _ = solve_populations(noisy_counts(c, rng, self.mode), self._solve_cal(rng))
        return P @ READOUT_SIGNS[j]

    def series(self, k, p: ModelParams, q: QuenchSpec, times, rng, j: int = 0):
        """Per-time noisy <gamma_j>, plus the noise-free readout populations."""
        rho_t = density_series(k, p, q, times)
        pops = readout_populations(rho_t, j)
        pops = pops / pops.sum(axis=-1, keepdims=True)
        return self.measure_populations(pops, rng, j), pops

    def window_average(self, k, p: ModelParams, q: QuenchSpec, window, rng, j: int = 0) -> float:
        times = window_times(window, self.n_time)
        vals, _ = self.series(k, p, q, times, rng, j)
        return float(vals.mean())


def measured_calibration(cal: PhotonCalibration, rng: np.random.Generator, mode: str = "normal") -> PhotonCalibration:
    """One shot-noise-limited measurement of the level counts."""
    N = noisy_counts(np.array(cal.N), rng, mode)
    return PhotonCalibration(tuple(np.maximum(N, 1.0)), cal.repetitions)


def density_series(k, p: ModelParams, q: QuenchSpec, times) -> np.ndarray:
    """rho(t) of the quenched state at clock times ``times`` -> (T, 4, 4)."""
    k = np.asarray(k, dtype=float)
    h = h_vector(k, p)
    psi = init_state_batch(prequench_h(k, p, q))
    E = float(np.linalg.norm(h))
    Hhat = build_hamiltonian(h / E) if E > 0 else np.zeros((4, 4))
    ph = CLOCK_PHASE * E * np.asarray(times, dtype=float)
    states = np.cos(ph)[:, None] * psi[None, :] - 1j * np.sin(ph)[:, None] * (Hhat @ psi)[None, :]
    return np.einsum("ta,tb->tab", states, states.conj())


class NoisyAverager:
    """Drop-in averager returning shot-noise-limited time averages.

    Works from the dephased density matrix: the counts of ``n_time``
    readouts summed over the window are normal with mean and variance
    ``n_time * D P``, so one draw per sequence replaces the per-time loop.
    The calibration used for solving is measured once at construction.
    """

    def __init__(
        self,
        cal: PhotonCalibration,
        rng: np.random.Generator,
        n_time: int = N_SAMPLES,
        mode: str = "normal",
        calibration_noise: bool = True,
    ):
        self.cal = cal
        self.rng = rng
        self.n_time = n_time
        self.mode = mode
        self.solve_cal = measured_calibration(cal, rng, mode) if calibration_noise else cal

    def __call__(self, k, p: ModelParams, q: QuenchSpec) -> np.ndarray:
        rho = averaged_density_batch(k, p, q)
        out = np.empty(np.shape(k)[:-1] + (5,))
        for j in range(5):
            pops = readout_populations(rho, j)
            pops = pops / pops.sum(axis=-1, keepdims=True)
            c = self.n_time * expected_counts(pops, self.cal)
            P, _ = solve_populations(noisy_counts(c, self.rng, self.mode) / self.n_time, self.solve_cal)
            out[..., j] = P @ READOUT_SIGNS[j]
        return out


# --------------------------------------------------------------------------
# Monte Carlo propagation
# --------------------------------------------------------------------------


@dataclass
class MCReport:
    mean: float
    std: float
    n_trials: int
    n_failed: int
    seed: int
    values: np.ndarray = field(repr=False, default=None)

    @property
    def failure_fraction(self) -> float:
        return self.n_failed / self.n_trials if self.n_trials else 0.0

    @property
    def insufficient(self) -> bool:
        return self.n_trials - self.n_failed < MIN_TRIALS

    def to_dict(self) -> dict:
        return {
            "mean": self.mean,
            "std": self.std,
            "n_trials": self.n_trials,
            "n_failed": self.n_failed,
            "failure_fraction": self.failure_fraction,
            "insufficient": self.insufficient,
            "seed": self.seed,
        }

    def write_json(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n")
        return path


def mc_propagate(
    pipeline: Callable[[np.random.Generator], float],
    n_trials: int,
    seed: int = 0,
    threads: int = 1,
    exceptions=(ArithmeticError, ValueError, RuntimeError),
) -> MCReport:
    """Rerun ``pipeline`` on independently drawn noise and collect statistics.

    Trial i gets its own generator spawned from ``seed``, so the result
    does not depend on ``threads``. Trials raising one of ``exceptions``
    are excluded and counted.
    """
    if n_trials < 1:
        raise ValueError("need at least one trial")
    children = np.random.SeedSequence(seed).spawn(n_trials)

    def run(child):
        try:
            return float(pipeline(np.random.default_rng(child)))
        except exceptions:
            return math.nan

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            vals = np.array(list(ex.map(run, children)))
    else:
        vals = np.array([run(c) for c in children])
    ok = np.isfinite(vals)
    good = vals[ok]
    mean = float(good.mean()) if good.size else math.nan
    std = float(good.std(ddof=1)) if good.size > 1 else 0.0
    return MCReport(mean, std, n_trials, int((~ok).sum()), seed, vals)
