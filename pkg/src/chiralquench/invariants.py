"""Spin-texture fields on the band inversion surface and their windings.

``g_i`` is the normal derivative of the time-averaged <gamma_i> after a
gamma_0 quench, ``f_i`` the normal derivative of <gamma_0> after a gamma_i
quench. Normals point toward increasing h_0, so for a deep quench both
reduce to the unit spin-orbit field hhat_so on the surface.

The winding W is the degree of the texture over the closed mesh, summed
from signed spherical-triangle areas. W_SB extends it to a four-component
texture by weighting each face with the area of the spherical cap above
its mean g_4.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import brentq

from . import kernels
from .bismesh import TriMesh
from .dynamics import QuenchSpec, time_avg_batch
from .model import ModelParams, grad_h0, h_vector

PROBE_STEP = 0.02 * np.pi
N_PROBE = 6
BISECT_TOL = 1e-3
#: finer stencil for the noiseless transition scan; the 0.02 pi probe
#: biases m_c upward by ~0.04 t_0 through the curvature of <gamma_0>_i
TRANSITION_PROBE_STEP = 0.002 * np.pi


class DegenerateTextureError(ValueError):
    def __init__(self, message, vertices=None):
        super().__init__(message)
        self.vertices = vertices if vertices is not None else []


class IllConditionedFaceError(ValueError):
    def __init__(self, message, faces=None):
        super().__init__(message)
        self.faces = faces if faces is not None else []


class TransitionNotFoundError(ValueError):
    pass


class DegenerateWeightWarning(RuntimeWarning):
    pass


@dataclass
class TextureField:
    """Per-vertex unit vectors plus the raw (unnormalized) slopes."""

    vectors: np.ndarray
    raw: np.ndarray
    flagged: np.ndarray = field(default=None)

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=float)
        self.raw = np.asarray(self.raw, dtype=float)
        if self.flagged is None:
            self.flagged = np.zeros(len(self.vectors), dtype=bool)

    @property
    def n_components(self) -> int:
        return self.vectors.shape[1]

    @classmethod
    def from_raw(cls, raw, rel_tol: float = 1e-12) -> "TextureField":
        raw = np.asarray(raw, dtype=float)
        norm = np.linalg.norm(raw, axis=1)
        scale = max(float(np.max(norm)) if norm.size else 0.0, 1e-300)
        flagged = ~np.isfinite(norm) | (norm <= rel_tol * scale)
        vec = np.zeros_like(raw)
        ok = ~flagged
        vec[ok] = raw[ok] / norm[ok, None]
        return cls(vec, raw, flagged)

    def write_csv(self, path, vertices) -> Path:
        path = Path(path)
        comps = ",".join(f"v{i}[1]" for i in range(self.n_components))
        lines = [f"index,kx[rad],ky[rad],kz[rad],{comps},flagged"]
        for i, (k, v) in enumerate(zip(np.asarray(vertices), self.vectors)):
            vals = ",".join(f"{x:.10g}" for x in (*k, *v))
            lines.append(f"{i},{vals},{int(self.flagged[i])}")
        path.write_text("\n".join(lines) + "\n")
        return path


@dataclass
class WindingResult:
    value: float
    face_solid_angles: np.ndarray
    error_estimate: float = 0.0

    def to_dict(self) -> dict:
        return {
            "value": self.value,
            "nearest_integer": int(round(self.value)),
            "error_estimate": self.error_estimate,
            "n_faces": int(len(self.face_solid_angles)),
        }

    def write_json(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n")
        return path


# --------------------------------------------------------------------------
# slopes across the surface
# --------------------------------------------------------------------------


def probe_offsets(probe_step: float = PROBE_STEP, n_probe: int = N_PROBE) -> np.ndarray:
    """Offsets along the normal, symmetric about the surface point."""
    if n_probe < 2:
        raise ValueError("need at least two probe points for a slope")
    return (np.arange(n_probe) - (n_probe - 1) / 2) * probe_step


def normal_slopes(points, normals, measure, probe_step=PROBE_STEP, n_probe=N_PROBE) -> np.ndarray:
    """Least-squares slope of ``measure(k)`` (..., C) along each normal line.

    ``measure`` maps (M, 3) momenta to (M, C) values. Returns (N, C).
    """
    points = np.asarray(points, dtype=float)
    normals = np.asarray(normals, dtype=float)
    s = probe_offsets(probe_step, n_probe)
    k = points[:, None, :] + s[None, :, None] * normals[:, None, :]
    vals = measure(k.reshape(-1, 3)).reshape(len(points), n_probe, -1)
    sc = s - s.mean()
    return np.einsum("p,npc->nc", sc, vals) / np.sum(sc * sc)


def _averager(averager):
    return averager if averager is not None else time_avg_batch


def g_field(
    mesh: TriMesh,
    p: ModelParams,
    probe_step: float = PROBE_STEP,
    n_probe: int = N_PROBE,
    averager=None,
    components=None,
) -> TextureField:
    """Normal slopes of <gamma_i>_0, i = 1..3 (and 4 when h_4 != 0)."""
    avg = _averager(averager)
    if components is None:
        components = [1, 2, 3, 4] if p.h_4 != 0 else [1, 2, 3]
    q = QuenchSpec(0)

    def measure(k):
        return avg(k, p, q)[:, components]

    raw = normal_slopes(mesh.vertices, mesh.vertex_normals(), measure, probe_step, n_probe)
    return TextureField.from_raw(raw)


def f_field(
    mesh: TriMesh,
    p: ModelParams,
    m_i: float = math.inf,
    probe_step: float = PROBE_STEP,
    n_probe: int = N_PROBE,
    averager=None,
) -> TextureField:
    """Normal slopes of <gamma_0>_i for quenches along gamma_1..gamma_3 of depth ``m_i``."""
    raw = _f_raw(mesh.vertices, mesh.vertex_normals(), p, m_i, probe_step, n_probe, averager)
    return TextureField.from_raw(raw)


def _f_raw(points, normals, p, m_i, probe_step, n_probe, averager):
    avg = _averager(averager)
    cols = []
    for axis in (1, 2, 3):
        q = QuenchSpec(axis, m_i)

        def measure(k, q=q):
            return avg(k, p, q)[:, :1]

        cols.append(normal_slopes(points, normals, measure, probe_step, n_probe)[:, 0])
    return np.stack(cols, axis=1)


def analytic_g(mesh: TriMesh, p: ModelParams) -> np.ndarray:
    """Unit h_so (with h_4 appended if nonzero) at the vertices; the exact deep-quench texture."""
    h = h_vector(mesh.vertices, p)
    v = h[:, 1:5] if p.h_4 != 0 else h[:, 1:4]
    return v / np.linalg.norm(v, axis=1, keepdims=True)


# --------------------------------------------------------------------------
# winding numbers
# --------------------------------------------------------------------------


def _face_vectors(mesh: TriMesh, tex: TextureField):
    if np.any(tex.flagged):
        bad = np.flatnonzero(tex.flagged[mesh.faces].any(axis=1))
        raise IllConditionedFaceError(f"{len(bad)} faces touch degenerate texture vertices", bad.tolist())
    v = tex.vectors[:, :3]
    n = np.linalg.norm(v, axis=1, keepdims=True)
    if np.any(n < 1e-12):
        bad = np.flatnonzero((n[:, 0] < 1e-12)[mesh.faces].any(axis=1))
        raise IllConditionedFaceError("texture has no in-plane part on some faces", bad.tolist())
    v = v / n
    return v[mesh.faces[:, 0]], v[mesh.faces[:, 1]], v[mesh.faces[:, 2]]


def _unit(x):
    return x / np.linalg.norm(x, axis=-1, keepdims=True)


def face_solid_angles(a, b, c, antipodal_tol: float = 1e-9) -> np.ndarray:
    """Signed solid angles; faces wider than a hemisphere are split in four first."""
    a, b, c = (np.asarray(x, dtype=float) for x in (a, b, c))
    wide = (np.sum(a * b, axis=1) < 0) | (np.sum(b * c, axis=1) < 0) | (np.sum(c * a, axis=1) < 0)
    out = np.empty(len(a))
    out[~wide] = kernels.solid_angles(a[~wide], b[~wide], c[~wide])
    if np.any(wide):
        wa, wb, wc = a[wide], b[wide], c[wide]
        sums = [wa + wb, wb + wc, wc + wa]
        bad = np.zeros(len(wa), dtype=bool)
        for s in sums:
            bad |= np.linalg.norm(s, axis=1) < antipodal_tol
        if np.any(bad):
            idx = np.flatnonzero(wide)[bad]
            raise IllConditionedFaceError(f"{len(idx)} faces have antipodal texture vectors", idx.tolist())
        ab, bc, ca = (_unit(s) for s in sums)
        out[wide] = (
            kernels.solid_angles(wa, ab, ca)
            + kernels.solid_angles(ab, wb, bc)
            + kernels.solid_angles(ca, bc, wc)
            + kernels.solid_angles(ab, bc, ca)
        )
    return out


def winding_W(mesh: TriMesh, tex: TextureField) -> WindingResult:
    """W = (1 / 4 pi) * sum of signed face solid angles."""
    a, b, c = _face_vectors(mesh, tex)
    S = face_solid_angles(a, b, c)
    return WindingResult(math.fsum(S) / (4 * math.pi), S)


def winding_WSB(mesh: TriMesh, tex: TextureField) -> WindingResult:
    """Four-component winding: each face weighted by (phi_3 - sin phi_3 cos phi_3) / 2.

    phi_3 = arccos of the face-mean g_4, with the solid angle taken from the
    normalized (g_1, g_2, g_3) part. For g_4 = 0 the weight is pi / 4 and
    W_SB reduces to W.
    """
    if tex.n_components != 4:
        if tex.n_components == 3:
            tex = TextureField(
                np.hstack([tex.vectors, np.zeros((len(tex.vectors), 1))]),
                np.hstack([tex.raw, np.zeros((len(tex.raw), 1))]),
                tex.flagged,
            )
        else:
            raise ValueError("W_SB needs a 3- or 4-component texture")
    a, b, c = _face_vectors(mesh, tex)
    S = face_solid_angles(a, b, c)
    g4 = np.clip(tex.vectors[:, 3][mesh.faces].mean(axis=1), -1.0, 1.0)
    if np.any(np.abs(g4) >= 1.0 - 1e-12):
        warnings.warn("faces with |g_4| = 1 carry no weight", DegenerateWeightWarning, stacklevel=2)
    phi3 = np.arccos(g4)
    weight = 0.5 * (phi3 - np.sin(phi3) * np.cos(phi3))
    contrib = S * weight
    return WindingResult(math.fsum(contrib) / math.pi**2, S)


def closed_form_WSB(n: int, m: float) -> float:
    """(2n / pi) (arccos m - m sqrt(1 - m^2)) for a uniform g_4 = m."""
    if not -1 < m < 1:
        raise ValueError(f"need |m| < 1, got {m}")
    return 2 * n / math.pi * (math.acos(m) - m * math.sqrt(1 - m * m))


# --------------------------------------------------------------------------
# dynamical transition of f
# --------------------------------------------------------------------------

DIAGONAL = -np.ones(3) / math.sqrt(3)


def diagonal_bis_point(p: ModelParams) -> np.ndarray:
    """The surface point on the [-1 -1 -1] diagonal from Gamma."""

    def h0(s):
        return float(h_vector(s * DIAGONAL * math.sqrt(3), p)[0])

    if h0(0.0) * h0(math.pi) >= 0:
        raise TransitionNotFoundError("no band inversion point on the [-1 -1 -1] diagonal")
    s = brentq(h0, 0.0, math.pi, xtol=1e-14)
    return -s * np.ones(3)


def f_projection(
    p: ModelParams,
    m_i: float,
    k0=None,
    probe_step: float = PROBE_STEP,
    n_probe: int = N_PROBE,
    averager=None,
) -> float:
    """Raw f(k0) projected on [-1 -1 -1]; positive means pointing outward."""
    k0 = diagonal_bis_point(p) if k0 is None else np.asarray(k0, dtype=float)
    n = grad_h0(k0, p)
    n = n / np.linalg.norm(n)
    raw = _f_raw(k0[None, :], n[None, :], p, m_i, probe_step, n_probe, averager)[0]
    return float(raw @ DIAGONAL)


def transition_scan(
    p: ModelParams,
    m_i_range=(1.0, 6.0),
    k0=None,
    n_scan: int = 51,
    tol: float = BISECT_TOL,
    probe_step: float = TRANSITION_PROBE_STEP,
    n_probe: int = N_PROBE,
) -> float:
    """Critical quench depth m_c where f(k0) flips from inward to outward.

    Scans ``n_scan`` depths across the range for a sign change of the
    projection, then bisects to ``tol``.
    """
    lo, hi = (float(x) for x in m_i_range)
    if not 0 < lo < hi:
        raise ValueError(f"bad quench-depth range {m_i_range}")
    k0 = diagonal_bis_point(p) if k0 is None else np.asarray(k0, dtype=float)

    def proj(m):
        return f_projection(p, m, k0, probe_step, n_probe)

    ms = np.linspace(lo, hi, n_scan)
    vals = np.array([proj(m) for m in ms])
    flips = np.flatnonzero(np.sign(vals[:-1]) * np.sign(vals[1:]) <= 0)
    if flips.size == 0:
        raise TransitionNotFoundError(f"f(k0) does not change direction for m_i in {m_i_range}")
    a, b = ms[flips[0]], ms[flips[0] + 1]
    fa = vals[flips[0]]
    if fa == 0.0:
        return float(a)
    while b - a > tol:
        mid = 0.5 * (a + b)
        fm = proj(mid)
        if np.sign(fm) == np.sign(fa):
            a, fa = mid, fm
        else:
            b = mid
    return 0.5 * (a + b)


def transition_fit(p: ModelParams, m_values, averager, k0=None, probe_step=PROBE_STEP, n_probe=N_PROBE):
    """m_c from a straight-line fit of noisy projections against m_i.

    Single noisy projections near the root are too uncertain for bisection,
    so the whole scan is regressed and the zero crossing of the line taken.
    Returns (m_c, slope, intercept, projections).
    """
    m_values = np.asarray(m_values, dtype=float)
    k0 = diagonal_bis_point(p) if k0 is None else np.asarray(k0, dtype=float)
    vals = np.array([f_projection(p, m, k0, probe_step, n_probe, averager) for m in m_values])
    slope, intercept = np.polyfit(m_values, vals, 1)
    if slope == 0:
        raise TransitionNotFoundError("flat projection; no crossing")
    return float(-intercept / slope), float(slope), float(intercept), vals


def critical_depth_closed_form(p: ModelParams) -> float:
    """m_c = -3 h_so,x at the diagonal surface point (where h_i = -E^2 / m_c)."""
    k0 = diagonal_bis_point(p)
    h = h_vector(k0, p)
    E2 = float(h @ h)
    return -E2 / float(h[1])
