"""Topological charges of the dynamical field Theta.

``Theta_i = sgn(h_0) <gamma_0>_i`` for quenches along gamma_1..gamma_3.
Its isolated zeros off the band inversion surface are the charges; the
degree of Theta on a small sphere around each is the charge value. The
total charge on the h_0 < 0 (Gamma) side of the surface equals the bulk
winding number.

Deep-quench charges sit at {0, -pi}^3. They carry the labels

    O1 (0,0,0)      O2 (-pi,0,0)    O3 (-pi,-pi,0)   O4 (0,-pi,0)
    O5 (-pi,0,-pi)  O6 (0,0,-pi)    O7 (0,-pi,-pi)   O8 (-pi,-pi,-pi)

i.e. a loop around the k_z = 0 plane followed by the complementary loop
on k_z = -pi, so that O_k and O_(9-k) are opposite corners and odd labels
carry +1. For shallow quenches each charge moves along the line with
sin kx = sin ky = sin kz toward its partner.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import least_squares

from .bismesh import TriMesh
from .dynamics import QuenchSpec, time_avg_batch
from .invariants import IllConditionedFaceError, face_solid_angles
from .model import ModelParams, h_vector, wrap_momentum

SCAN_STEP = 0.05 * np.pi
SPHERE_RADIUS = 0.05 * np.pi
DEDUP_RADIUS = 0.02 * np.pi
ZERO_TOL = 1e-6
ICOSPHERE_LEVEL = 3

LABELS = {
    "O1": (0.0, 0.0, 0.0),
    "O2": (-np.pi, 0.0, 0.0),
    "O3": (-np.pi, -np.pi, 0.0),
    "O4": (0.0, -np.pi, 0.0),
    "O5": (-np.pi, 0.0, -np.pi),
    "O6": (0.0, 0.0, -np.pi),
    "O7": (0.0, -np.pi, -np.pi),
    "O8": (-np.pi, -np.pi, -np.pi),
}

#: named search regions: (fixed axis, value) or None for the full zone
REGIONS = {
    "bz": None,
    "kz0": (2, 0.0),
    "kz-pi": (2, -np.pi),
    "kx0": (0, 0.0),
    "kx-pi": (0, -np.pi),
}


class DegreeError(ValueError):
    pass


class OnBISError(ValueError):
    pass


@dataclass
class ThetaSample:
    k: np.ndarray
    theta: np.ndarray
    norm_raw: np.ndarray
    flagged: np.ndarray


@dataclass
class ChargeRecord:
    location: np.ndarray
    value: int
    enclosed: bool
    m_i: float
    label: str = ""

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "location[rad]": [float(x) for x in self.location],
            "value": int(self.value),
            "enclosed": bool(self.enclosed),
            "m_i[t0]": None if math.isinf(self.m_i) else float(self.m_i),
        }


def _avg(averager):
    return averager if averager is not None else time_avg_batch


def theta_raw(k, p: ModelParams, m_i: float = math.inf, averager=None) -> np.ndarray:
    """sgn(h_0) <gamma_0>_i for i = 1, 2, 3, shape (..., 3)."""
    k = np.asarray(k, dtype=float)
    avg = _avg(averager)
    cols = [avg(k, p, QuenchSpec(i, m_i))[..., 0] for i in (1, 2, 3)]
    sgn = np.sign(h_vector(k, p)[..., 0])
    return sgn[..., None] * np.stack(cols, axis=-1)


def theta_field(k, p: ModelParams, m_i: float = math.inf, averager=None) -> ThetaSample:
    """Normalized Theta with its raw norm; points on the surface are flagged."""
    k = np.asarray(k, dtype=float)
    raw = theta_raw(k, p, m_i, averager)
    norm = np.linalg.norm(raw, axis=-1)
    flagged = (h_vector(k, p)[..., 0] == 0) | (norm == 0)
    theta = np.divide(raw, norm[..., None], out=np.zeros_like(raw), where=~flagged[..., None])
    return ThetaSample(k, theta, norm, flagged)


# --------------------------------------------------------------------------
# locating zeros
# --------------------------------------------------------------------------


def _periodic_dist(a, b):
    return np.linalg.norm(wrap_momentum(np.asarray(a) - np.asarray(b)), axis=-1)


def _grid_minima(vals):
    """Boolean mask of periodic local minima (all 3^d - 1 neighbours)."""
    mask = np.ones(vals.shape, dtype=bool)
    for shift in itertools.product((-1, 0, 1), repeat=vals.ndim):
        if any(shift):
            mask &= vals <= np.roll(vals, shift, axis=tuple(range(vals.ndim)))
    return mask


def _scan_grid(region, step):
    n = round(2 * np.pi / step)
    ax = -np.pi + step * np.arange(n)
    if region is None:
        g = np.stack(np.meshgrid(ax, ax, ax, indexing="ij"), axis=-1)
        return g, None
    fixed_axis, value = region
    free = [i for i in range(3) if i != fixed_axis]
    a, b = np.meshgrid(ax, ax, indexing="ij")
    g = np.empty(a.shape + (3,))
    g[..., free[0]] = a
    g[..., free[1]] = b
    g[..., fixed_axis] = value
    return g, free


def locate_charges(
    p: ModelParams,
    m_i: float = math.inf,
    region="bz",
    step: float = SCAN_STEP,
    tol: float = ZERO_TOL,
    averager=None,
) -> list[np.ndarray]:
    """Isolated zeros of Theta off the surface, sorted lexicographically.

    Coarse periodic grid scan for local minima of |Theta|_raw, then a
    least-squares root polish (restricted to the plane for plane regions).
    Candidates that converge onto the surface (where |Theta| also vanishes)
    are discarded.
    """
    reg = REGIONS[region] if isinstance(region, str) else region
    grid, free = _scan_grid(reg, step)
    norm = np.linalg.norm(theta_raw(grid, p, m_i, averager), axis=-1)
    cand = grid[_grid_minima(norm)]
    found: list[np.ndarray] = []
    for k_start in cand:
        idx = list(range(3)) if free is None else free

        def resid(x, k_start=k_start, idx=idx):
            k = k_start.copy()
            k[idx] = x
            return theta_raw(k, p, m_i, averager)

        sol = least_squares(resid, k_start[idx], xtol=1e-14, ftol=1e-14, gtol=1e-14)
        k = k_start.copy()
        k[idx] = sol.x
        k = wrap_momentum(k)
        k[np.abs(k + np.pi) < 1e-9] = -np.pi
        k[np.abs(k) < 1e-12] = 0.0
        if np.linalg.norm(theta_raw(k, p, m_i, averager)) >= tol:
            continue
        if abs(h_vector(k, p)[0]) < 1e-6:
            continue  # on the surface, not a charge
        if _periodic_dist(k, k_start) > 2 * step:
            continue
        if any(_periodic_dist(k, f) < DEDUP_RADIUS for f in found):
            continue
        found.append(k)
    found.sort(key=lambda x: tuple(x))
    return found


# --------------------------------------------------------------------------
# charge values
# --------------------------------------------------------------------------


def icosphere(level: int = ICOSPHERE_LEVEL) -> TriMesh:
    """Unit icosphere with outward-oriented faces; 20 * 4^level faces."""
    t = (1 + math.sqrt(5)) / 2
    v = np.array(
        [
            [-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0],
            [0, -1, t], [0, 1, t], [0, -1, -t], [0, 1, -t],
            [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1],
        ],
        dtype=float,
    )
    f = np.array(
        [
            [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
            [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
            [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
            [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
        ]
    )
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    for _ in range(level):
        mesh = TriMesh(v, f)
        edges, inv = mesh.edges()
        mid = v[edges[:, 0]] + v[edges[:, 1]]
        mid /= np.linalg.norm(mid, axis=1, keepdims=True)
        base = len(v)
        e01, e12, e20 = (inv[:, i] + base for i in range(3))
        f0, f1, f2 = f[:, 0], f[:, 1], f[:, 2]
        f = np.concatenate(
            [
                np.stack([f0, e01, e20], 1),
                np.stack([e01, f1, e12], 1),
                np.stack([e20, e12, f2], 1),
                np.stack([e01, e12, e20], 1),
            ]
        )
        v = np.vstack([v, mid])
    return TriMesh(v, f)


def sphere_degree(field_fn, centre, radius: float, level: int = ICOSPHERE_LEVEL) -> float:
    """Unrounded degree of ``field_fn`` (vectors, not necessarily unit) on a sphere."""
    sph = icosphere(level)
    vals = field_fn(np.asarray(centre, dtype=float) + radius * sph.vertices)
    n = np.linalg.norm(vals, axis=1)
    if np.any(n == 0):
        raise DegreeError("field vanishes on the probe sphere")
    u = vals / n[:, None]
    f = sph.faces
    try:
        S = face_solid_angles(u[f[:, 0]], u[f[:, 1]], u[f[:, 2]])
    except IllConditionedFaceError as exc:
        raise DegreeError(f"probe sphere too coarse: {exc}") from exc
    return math.fsum(S) / (4 * math.pi)


def charge_value(
    location,
    p: ModelParams,
    m_i: float = math.inf,
    sphere_radius: float = SPHERE_RADIUS,
    level: int = ICOSPHERE_LEVEL,
    averager=None,
) -> int:
    """Degree of Theta around ``location``, rounded; residue must stay below 0.1."""
    d = sphere_degree(lambda k: theta_raw(k, p, m_i, averager), location, sphere_radius, level)
    n = round(d)
    if abs(d - n) >= 0.1:
        raise DegreeError(f"degree {d:.4f} is not near an integer; try a smaller sphere")
    return int(n)


# --------------------------------------------------------------------------
# enclosure
# --------------------------------------------------------------------------


def gamma_side_sign(p: ModelParams) -> float:
    return float(np.sign(h_vector(np.zeros(3), p)[0]))


def is_enclosed(location, p: ModelParams) -> bool:
    h0 = float(h_vector(np.asarray(location, dtype=float), p)[0])
    if h0 == 0:
        raise OnBISError(f"charge at {np.asarray(location).tolist()} sits on the surface")
    return bool(np.sign(h0) == gamma_side_sign(p))


def enclosed_total(mesh: TriMesh | None, charges: list[ChargeRecord]) -> int:
    """Sum of the values of charges on the Gamma side of the surface.

    Enclosure is stored on each record (sgn h_0 test). ``mesh`` is accepted
    for interface symmetry with :func:`enclosed_by_mesh`, which gives an
    independent crossing-parity answer.
    """
    return int(sum(c.value for c in charges if c.enclosed))


def _segment_crossings(mesh: TriMesh, a, b) -> int:
    """Möller-Trumbore count of crossings of segment a->b with the (periodic) mesh."""
    a = np.asarray(a, dtype=float)
    d = np.asarray(b, dtype=float) - a
    v = mesh.vertices[mesh.faces]
    v0 = v[:, 0]
    e1 = wrap_momentum(v[:, 1] - v0)
    e2 = wrap_momentum(v[:, 2] - v0)
    count = 0
    for shift in itertools.product((-2 * np.pi, 0.0, 2 * np.pi), repeat=3):
        s0 = v0 + np.array(shift)
        pvec = np.cross(d, e2)
        det = np.sum(e1 * pvec, axis=1)
        ok = np.abs(det) > 1e-14
        inv = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)
        tvec = a - s0
        u = np.sum(tvec * pvec, axis=1) * inv
        qvec = np.cross(tvec, e1)
        w = (qvec @ d) * inv
        t = np.sum(e2 * qvec, axis=1) * inv
        hit = ok & (u >= 0) & (w >= 0) & (u + w <= 1) & (t >= 0) & (t <= 1)
        count += int(np.sum(hit))
    return count


#: generic offset that keeps crossing tests away from mesh vertices and edges
_JITTER = np.array([0.01234, 0.02718, 0.00577])


def enclosed_by_mesh(mesh: TriMesh, location, p: ModelParams) -> bool:
    """Crossing parity of the segment from the charge to a point next to Gamma."""
    ref = _JITTER.copy()
    return _segment_crossings(mesh, np.asarray(location, dtype=float) + 0.5 * _JITTER[::-1], ref) % 2 == 0


def label_for(location) -> str:
    for name, k in LABELS.items():
        if _periodic_dist(location, k) < 1e-6:
            return name
    return ""


def find_charges(p: ModelParams, m_i: float = math.inf, region="bz", averager=None, **kwargs) -> list[ChargeRecord]:
    """Locate, value and classify every charge in the region."""
    out = []
    for k in locate_charges(p, m_i, region, averager=averager, **kwargs):
        out.append(ChargeRecord(k, charge_value(k, p, m_i, averager=averager), is_enclosed(k, p), m_i, label_for(k)))
    return out


def write_charge_table(charges: list[ChargeRecord], path) -> Path:
    path = Path(path)
    path.write_text(json.dumps([c.to_dict() for c in charges], indent=1) + "\n")
    return path


def write_norm_map(p: ModelParams, m_i: float, region: str, path, step: float = SCAN_STEP) -> Path:
    """|Theta|_raw on a plane preset as CSV."""
    reg = REGIONS[region]
    if reg is None:
        raise ValueError("norm maps are written for plane regions only")
    grid, free = _scan_grid(reg, step)
    norm = np.linalg.norm(theta_raw(grid, p, m_i), axis=-1)
    names = "xyz"
    lines = [f"k{names[free[0]]}[rad],k{names[free[1]]}[rad],norm_raw[1]"]
    for idx in np.ndindex(norm.shape):
        k = grid[idx]
        lines.append(f"{k[free[0]]:.10g},{k[free[1]]:.10g},{norm[idx]:.10g}")
    Path(path).write_text("\n".join(lines) + "\n")
    return Path(path)


# --------------------------------------------------------------------------
# trajectories versus quench depth
# --------------------------------------------------------------------------

SYMMETRY_AXIS = np.ones(3) / math.sqrt(3)


@dataclass
class Trajectory:
    """Charge positions (segment parameter s in [0, 1]) per quench depth."""

    start: np.ndarray
    end: np.ndarray
    m_values: np.ndarray
    zeros: list = field(default_factory=list)  # per m: array of s
    bis_crossings: list = field(default_factory=list)  # (m_c, s)
    annihilations: list = field(default_factory=list)  # (m_low, m_high)
    gaps: list = field(default_factory=list)  # (m_low, m_high)

    def point(self, s):
        return self.start + np.asarray(s)[..., None] * (self.end - self.start)

    def to_dict(self) -> dict:
        return {
            "start[rad]": self.start.tolist(),
            "end[rad]": self.end.tolist(),
            "m_i[t0]": [None if math.isinf(m) else float(m) for m in self.m_values],
            "zeros_s[1]": [z.tolist() for z in self.zeros],
            "bis_crossings[t0,1]": [list(x) for x in self.bis_crossings],
            "annihilations[t0]": [list(x) for x in self.annihilations],
            "gaps[t0]": [list(x) for x in self.gaps],
        }


def segment_zeros(
    p: ModelParams, m_i: float, start, end, n_scan: int = 801, tol: float = 1e-10, axis=SYMMETRY_AXIS, averager=None
):
    """Zeros of Theta on the segment, via sign changes of Theta . axis.

    On the lines joining opposite corners Theta is parallel to (1, 1, 1),
    so its projection changes sign exactly at the charges while the
    |hhat_0| factor keeps it from flipping at the surface. Each bracket is
    bisected to ``tol`` in the segment parameter.
    """
    start = np.asarray(start, dtype=float)
    end = np.asarray(end, dtype=float)
    # overshoot the ends slightly so zeros sitting on an endpoint are bracketed
    s = np.linspace(-0.02, 1.02, n_scan)

    def proj(x):
        k = start + np.asarray(x)[..., None] * (end - start)
        return theta_raw(k, p, m_i, averager) @ axis

    v = proj(s)
    out: list[float] = []
    for i in np.flatnonzero(v == 0):
        out.append(s[i])
    for i in np.flatnonzero(v[:-1] * v[1:] < 0):
        a, b, fa = s[i], s[i + 1], v[i]
        while b - a > tol:
            mid = 0.5 * (a + b)
            fm = float(proj(mid))
            if fm == 0:
                a = b = mid
                break
            if np.sign(fm) == np.sign(fa):
                a, fa = mid, fm
            else:
                b = mid
        out.append(0.5 * (a + b))
    return np.array(sorted(out))


def _h0_sign(p, k):
    return float(np.sign(h_vector(k, p)[0]))


def _event_between(p, traj, z0, z1) -> bool:
    if len(z0) != len(z1):
        return True
    return any(_h0_sign(p, traj.point(a)) != _h0_sign(p, traj.point(b)) for a, b in zip(z0, z1))


def track_charges(
    p: ModelParams,
    m_values,
    segment=("O1", "O8"),
    n_scan: int = 801,
    m_tol: float = 1e-3,
    averager=None,
) -> Trajectory:
    """Follow the charges on a corner-to-corner segment as m_i changes.

    ``m_values`` are visited in the order given (typically decreasing).
    Any interval in which the zero count or the h_0 sign of a zero changes
    is halved until it is shorter than ``m_tol``, which separates a
    surface crossing from a nearby annihilation. A zero whose h_0 sign
    flips has crossed the surface; two zeros vanishing or appearing
    together are a pair annihilation (or creation); any other change in
    the count is reported as a gap.
    """
    a, b = segment
    start = np.asarray(LABELS[a] if isinstance(a, str) else a, dtype=float)
    end = np.asarray(LABELS[b] if isinstance(b, str) else b, dtype=float)
    m_values = np.asarray(m_values, dtype=float)
    traj = Trajectory(start, end, m_values)
    def zeros_at(m):
        return segment_zeros(p, m, start, end, n_scan, averager=averager)

    traj.zeros = [zeros_at(m) for m in m_values]

    for j in range(1, len(m_values)):
        stack = [(m_values[j - 1], traj.zeros[j - 1], m_values[j], traj.zeros[j])]
        while stack:
            m0, z0, m1, z1 = stack.pop()
            if not _event_between(p, traj, z0, z1):
                continue
            if abs(m1 - m0) > m_tol and np.isfinite(m0) and np.isfinite(m1):
                mid = 0.5 * (m0 + m1)
                zm = zeros_at(mid)
                stack.append((mid, zm, m1, z1))
                stack.append((m0, z0, mid, zm))
                continue
            m_mid = float(0.5 * (m0 + m1))
            if len(z0) == len(z1):
                for s0, s1 in zip(z0, z1):
                    if _h0_sign(p, traj.point(s0)) != _h0_sign(p, traj.point(s1)):
                        traj.bis_crossings.append((m_mid, float(0.5 * (s0 + s1))))
            elif abs(len(z0) - len(z1)) == 2:
                traj.annihilations.append((float(min(m0, m1)), float(max(m0, m1))))
            else:
                traj.gaps.append((float(min(m0, m1)), float(max(m0, m1))))
    return traj
