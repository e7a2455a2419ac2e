"""Hot loops, each in a numba and a numpy flavour.

The public names (``evolve_batch``, ``windowed_average_batch``,
``solid_angles``) dispatch on ``_accel.USE_NUMBA``. Both flavours are kept
importable (``*_numpy`` / ``*_numba``) so tests and the benchmark can compare
them directly.
"""

import numpy as np

from ._accel import USE_NUMBA, njit
from .model import GAMMA

_GAMMA = np.ascontiguousarray(GAMMA)


# --------------------------------------------------------------------------
# closed-form evolution  U(t) = cos(Et) - i sin(Et) H/E
# --------------------------------------------------------------------------


def evolve_batch_numpy(h, psi, t):
    h = np.asarray(h, dtype=float)
    psi = np.asarray(psi, dtype=complex)
    t = np.broadcast_to(np.asarray(t, dtype=float), h.shape[:-1])
    E = np.linalg.norm(h, axis=-1)
    safe = np.where(E > 0, E, 1.0)
    Hhat = np.einsum("nj,jab->nab", h / safe[:, None], _GAMMA)
    phi = np.einsum("nab,nb->na", Hhat, psi)
    c = np.cos(E * t)[:, None]
    s = np.sin(E * t)[:, None]
    out = c * psi - 1j * s * phi
    return np.einsum("na,jab,nb->nj", out.conj(), _GAMMA, out).real


@njit
def evolve_batch_numba(h, psi, t):
    n = h.shape[0]
    pol = np.empty((n, 5))
    out = np.empty(4, dtype=np.complex128)
    for i in range(n):
        E = 0.0
        for j in range(5):
            E += h[i, j] * h[i, j]
        E = np.sqrt(E)
        c = np.cos(E * t[i])
        s = np.sin(E * t[i])
        for a in range(4):
            acc = 0.0j
            if E > 0:
                for b in range(4):
                    hab = 0.0j
                    for j in range(5):
                        hab += h[i, j] * _GAMMA[j, a, b]
                    acc += hab * psi[i, b]
                acc /= E
            out[a] = c * psi[i, a] - 1j * s * acc
        for j in range(5):
            v = 0.0j
            for a in range(4):
                for b in range(4):
                    v += np.conj(out[a]) * _GAMMA[j, a, b] * out[b]
            pol[i, j] = v.real
    return pol


def evolve_batch(h, psi, t):
    """Polarizations <gamma_j> after evolving ``psi`` for time ``t`` under ``h``.

    Shapes: ``h`` (N, 5), ``psi`` (N, 4), ``t`` scalar or (N,) -> (N, 5).
    """
    if USE_NUMBA:
        h = np.ascontiguousarray(h, dtype=float)
        psi = np.ascontiguousarray(psi, dtype=complex)
        t = np.ascontiguousarray(np.broadcast_to(np.asarray(t, dtype=float), h.shape[:1]))
        return evolve_batch_numba(h, psi, t)
    return evolve_batch_numpy(h, psi, t)


# --------------------------------------------------------------------------
# sampled time average with per-channel damping of the oscillating part
# --------------------------------------------------------------------------


def _oscillation_coefficients(h, psi):
    """Split <gamma_j(t)> = C_j + A_j cos(2Et) + B_j sin(2Et)."""
    E = np.linalg.norm(h, axis=-1)
    safe = np.where(E > 0, E, 1.0)
    Hhat = np.einsum("nj,jab->nab", h / safe[:, None], _GAMMA)
    phi = np.einsum("nab,nb->na", Hhat, psi)
    a = np.einsum("na,jab,nb->nj", psi.conj(), _GAMMA, psi).real
    b = np.einsum("na,jab,nb->nj", phi.conj(), _GAMMA, phi).real
    B = np.einsum("na,jab,nb->nj", psi.conj(), _GAMMA, phi).imag
    gapped = (E > 0)[:, None]
    C = np.where(gapped, 0.5 * (a + b), a)
    A = np.where(gapped, 0.5 * (a - b), 0.0)
    B = np.where(gapped, B, 0.0)
    return E, C, A, B


def windowed_average_batch_numpy(h, psi, times, rates, phase_scale):
    h = np.asarray(h, dtype=float)
    psi = np.asarray(psi, dtype=complex)
    times = np.asarray(times, dtype=float)
    E, C, A, B = _oscillation_coefficients(h, psi)
    arg = 2.0 * phase_scale * E[:, None] * times[None, :]
    damp = np.exp(-np.asarray(rates, dtype=float)[:, None] * times[None, :])  # (5, T)
    cos_w = np.einsum("nt,jt->nj", np.cos(arg), damp) / times.size
    sin_w = np.einsum("nt,jt->nj", np.sin(arg), damp) / times.size
    return C + A * cos_w + B * sin_w


@njit
def _windowed_numba(E, C, A, B, times, rates, phase_scale):
    n = E.shape[0]
    nt = times.shape[0]
    damp = np.empty((5, nt))
    for j in range(5):
        for m in range(nt):
            damp[j, m] = np.exp(-rates[j] * times[m]) / nt
    out = np.empty((n, 5))
    for i in range(n):
        cw = np.zeros(5)
        sw = np.zeros(5)
        for m in range(nt):
            w = 2.0 * phase_scale * E[i] * times[m]
            c = np.cos(w)
            s = np.sin(w)
            for j in range(5):
                cw[j] += damp[j, m] * c
                sw[j] += damp[j, m] * s
        for j in range(5):
            out[i, j] = C[i, j] + A[i, j] * cw[j] + B[i, j] * sw[j]
    return out


def windowed_average_batch(h, psi, times, rates, phase_scale=1.0):
    """Mean of damped <gamma_j(t)> over the sample ``times``.

    The constant (band-projector) part is never damped; the oscillating part
    of channel j is multiplied by ``exp(-rates[j] * t)``. The evolution phase
    at time t is ``phase_scale * E * t``.
    """
    if USE_NUMBA:
        h = np.ascontiguousarray(h, dtype=float)
        psi = np.ascontiguousarray(psi, dtype=complex)
        E, C, A, B = _oscillation_coefficients(h, psi)
        return _windowed_numba(
            E,
            np.ascontiguousarray(C),
            np.ascontiguousarray(A),
            np.ascontiguousarray(B),
            np.ascontiguousarray(times, dtype=float),
            np.ascontiguousarray(rates, dtype=float),
            float(phase_scale),
        )
    return windowed_average_batch_numpy(h, psi, times, rates, phase_scale)


# --------------------------------------------------------------------------
# signed solid angle of spherical triangles (spherical excess)
# --------------------------------------------------------------------------


def solid_angles_numpy(a, b, c):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    c = np.asarray(c, dtype=float)
    det = np.sum(a * np.cross(b, c), axis=-1)
    den = 1.0 + np.sum(a * b, axis=-1) + np.sum(b * c, axis=-1) + np.sum(c * a, axis=-1)
    return 2.0 * np.arctan2(det, den)


@njit
def solid_angles_numba(a, b, c):
    n = a.shape[0]
    out = np.empty(n)
    for i in range(n):
        ax, ay, az = a[i, 0], a[i, 1], a[i, 2]
        bx, by, bz = b[i, 0], b[i, 1], b[i, 2]
        cx, cy, cz = c[i, 0], c[i, 1], c[i, 2]
        det = ax * (by * cz - bz * cy) - ay * (bx * cz - bz * cx) + az * (bx * cy - by * cx)
        den = 1.0 + (ax * bx + ay * by + az * bz) + (bx * cx + by * cy + bz * cz) + (cx * ax + cy * ay + cz * az)
        out[i] = 2.0 * np.arctan2(det, den)
    return out


def solid_angles(a, b, c):
    """Signed solid angle of the spherical triangles (a, b, c).

    Inputs are unit vectors of shape (N, 3). The magnitude is the
    spherical excess of the geodesic triangle, evaluated as
    ``2 atan2(det[a, b, c], 1 + a.b + b.c + c.a)`` which stays accurate
    for slivers and coincident vertices. The sign is that of det[a, b, c],
    so counter-clockwise triangles seen from outside count positive.
    """
    if USE_NUMBA:
        return solid_angles_numba(
            np.ascontiguousarray(a, dtype=float),
            np.ascontiguousarray(b, dtype=float),
            np.ascontiguousarray(c, dtype=float),
        )
    return solid_angles_numpy(a, b, c)
