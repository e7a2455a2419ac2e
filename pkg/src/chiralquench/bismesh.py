"""Band-inversion-surface reconstruction as a triangular mesh.

Pipeline: sample the time-averaged <gamma_0> after a gamma_0 quench on the
first octant [0, pi]^3, smooth it, seed a coarse mesh on the octant
boundary, then repeatedly split every edge at its midpoint and slide the new
vertex along the local face normal to the minimum of |<gamma_0>|. The
octant mesh is mirrored into the other seven octants and welded.

Seeding scans the 12 edges of the octant cube for minima of the field. When
the only crossings are the three coordinate axes this is the single initial
triangle of per-axis minima. Other phases (multi-sheet or corner-centred
surfaces) give closed loops on the cube boundary, which are fanned around a
centre vertex found the same way.

Orientation convention: face normals point toward increasing h_0.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from .dynamics import QuenchSpec, time_avg_batch
from .model import ModelParams, grad_h0, h_vector, wrap_momentum

FieldFn = Callable[[np.ndarray], np.ndarray]

GRID_STEP = 0.1 * np.pi
BRACKET = 0.1 * np.pi
SEARCH_TOL = 1e-4 * np.pi
#: a seed minimum must dip this far below the field maxima on either side
BIS_MIN_DEPTH = 0.25
#: ... and stay below this value (the field vanishes on the surface)
BIS_MAX_VALUE = 0.2
_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0
_ON_PLANE = 1e-9


class BISAbsentError(ValueError):
    """No band inversion surface in the sampled region."""


class StitchError(RuntimeError):
    def __init__(self, message, seam_edges=None):
        super().__init__(message)
        self.seam_edges = seam_edges if seam_edges is not None else []


# --------------------------------------------------------------------------
# grids
# --------------------------------------------------------------------------


@dataclass
class ScalarGrid:
    origin: np.ndarray
    step: float
    values: np.ndarray

    def __post_init__(self):
        self.origin = np.asarray(self.origin, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if not self.step > 0:
            raise ValueError("grid step must be positive")
        if self.values.ndim != 3 or min(self.values.shape) < 2:
            raise ValueError(f"need a 3D grid with >= 2 points per axis, got {self.values.shape}")

    @property
    def dims(self) -> tuple:
        return self.values.shape

    def axis(self, i: int) -> np.ndarray:
        return self.origin[i] + self.step * np.arange(self.dims[i])

    def points(self) -> np.ndarray:
        mesh = np.meshgrid(*(self.axis(i) for i in range(3)), indexing="ij")
        return np.stack(mesh, axis=-1)

    def interpolate(self, k, order: int = 3) -> np.ndarray:
        """Spline interpolation with mirror boundaries (the field is even about 0 and pi)."""
        k = np.asarray(k, dtype=float)
        idx = (k.reshape(-1, 3) - self.origin) / self.step
        vals = ndimage.map_coordinates(self.values, idx.T, order=order, mode="mirror")
        return vals.reshape(k.shape[:-1])


def octant_axis(step: float = GRID_STEP) -> np.ndarray:
    n = round(np.pi / step)
    if n < 1 or abs(n * step - np.pi) > 1e-9:
        raise ValueError(f"grid step {step} does not divide pi")
    return np.linspace(0.0, np.pi, n + 1)


def sample_octant(
    p: ModelParams,
    q: QuenchSpec | None = None,
    step: float = GRID_STEP,
    averager=None,
    signed: bool = False,
) -> ScalarGrid:
    """Time-averaged <gamma_0> over the first-octant grid.

    ``signed=True`` multiplies by sgn(h_0), which exposes the crossing of
    the surface as a sign change.
    """
    q = q if q is not None else QuenchSpec(0)
    ax = octant_axis(step)
    pts = np.stack(np.meshgrid(ax, ax, ax, indexing="ij"), axis=-1)
    avg = (averager or time_avg_batch)(pts.reshape(-1, 3), p, q)[:, 0].reshape(pts.shape[:-1])
    if signed:
        avg = np.sign(h_vector(pts, p)[..., 0]) * avg
    return ScalarGrid(np.zeros(3), ax[1] - ax[0], avg)


def smooth(grid: ScalarGrid, width: float) -> ScalarGrid:
    """Separable Gaussian smoothing; ``width`` is sigma in grid cells."""
    if width < 0:
        raise ValueError("smoothing width must be nonnegative")
    if width == 0:
        return ScalarGrid(grid.origin.copy(), grid.step, grid.values.copy())
    vals = ndimage.gaussian_filter(grid.values, sigma=width, mode="mirror")
    return ScalarGrid(grid.origin.copy(), grid.step, vals)


def exact_field(p: ModelParams, q: QuenchSpec | None = None) -> FieldFn:
    """|<gamma_0>| from the analytic infinite-time average."""
    q = q if q is not None else QuenchSpec(0)

    def f(k):
        return np.abs(time_avg_batch(k, p, q)[..., 0])

    return f


def grid_field(grid: ScalarGrid) -> FieldFn:
    def f(k):
        return np.abs(grid.interpolate(np.clip(k, 0.0, np.pi)))

    return f


# --------------------------------------------------------------------------
# meshes
# --------------------------------------------------------------------------


def _min_image(d):
    return wrap_momentum(d)


@dataclass
class TriMesh:
    vertices: np.ndarray
    faces: np.ndarray
    flags: np.ndarray = field(default=None)

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=float).reshape(-1, 3)
        self.faces = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
        if self.flags is None:
            self.flags = np.zeros(len(self.vertices), dtype=bool)
        if self.faces.size and (self.faces.min() < 0 or self.faces.max() >= len(self.vertices)):
            raise ValueError("face index out of range")

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    def face_vectors(self, periodic: bool = True):
        v = self.vertices[self.faces]
        d1 = v[:, 1] - v[:, 0]
        d2 = v[:, 2] - v[:, 0]
        if periodic:
            d1, d2 = _min_image(d1), _min_image(d2)
        return d1, d2

    def face_normals(self, periodic: bool = True) -> np.ndarray:
        d1, d2 = self.face_vectors(periodic)
        n = np.cross(d1, d2)
        return n / np.linalg.norm(n, axis=1, keepdims=True)

    def face_areas(self, periodic: bool = True) -> np.ndarray:
        d1, d2 = self.face_vectors(periodic)
        return 0.5 * np.linalg.norm(np.cross(d1, d2), axis=1)

    def face_centroids(self) -> np.ndarray:
        v = self.vertices[self.faces]
        c = v[:, 0] + (_min_image(v[:, 1] - v[:, 0]) + _min_image(v[:, 2] - v[:, 0])) / 3
        return c

    def vertex_normals(self) -> np.ndarray:
        d1, d2 = self.face_vectors()
        n = np.cross(d1, d2)  # area weighted
        acc = np.zeros_like(self.vertices)
        for i in range(3):
            np.add.at(acc, self.faces[:, i], n)
        norm = np.linalg.norm(acc, axis=1, keepdims=True)
        return acc / np.where(norm > 0, norm, 1.0)

    def edges(self) -> tuple[np.ndarray, np.ndarray]:
        """Unique undirected edges and, per face, the index of edges (01, 12, 20)."""
        f = self.faces
        e = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
        e.sort(axis=1)
        uniq, inv = np.unique(e, axis=0, return_inverse=True)
        inv = inv.reshape(3, -1).T
        return uniq, inv

    def edge_face_counts(self) -> np.ndarray:
        _, inv = self.edges()
        return np.bincount(inv.ravel())

    def is_closed(self) -> bool:
        return bool(np.all(self.edge_face_counts() == 2))

    def is_consistently_oriented(self) -> bool:
        f = self.faces
        directed = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
        uniq = np.unique(directed, axis=0)
        return len(uniq) == len(directed)

    def euler_characteristic(self) -> int:
        e, _ = self.edges()
        return self.n_vertices - len(e) + self.n_faces

    def residuals(self, p: ModelParams) -> np.ndarray:
        """h_0 at every vertex; zero on the exact surface."""
        return h_vector(self.vertices, p)[:, 0]

    def copy(self) -> "TriMesh":
        return TriMesh(self.vertices.copy(), self.faces.copy(), self.flags.copy())


def orient_faces(mesh: TriMesh, p: ModelParams) -> TriMesh:
    """Flip faces whose normal points toward decreasing h_0."""
    n = mesh.face_normals()
    g = grad_h0(mesh.face_centroids(), p)
    flip = np.sum(n * g, axis=1) < 0
    faces = mesh.faces.copy()
    faces[flip] = faces[flip][:, ::-1]
    return TriMesh(mesh.vertices.copy(), faces, mesh.flags.copy())


# --------------------------------------------------------------------------
# 1D minimization
# --------------------------------------------------------------------------


def golden_section(fn, a, b, tol: float = SEARCH_TOL):
    """Vectorized golden-section search for minima of ``fn`` on [a, b]."""
    a = np.array(a, dtype=float)
    b = np.array(b, dtype=float)
    width = float(np.max(b - a)) if a.size else 0.0
    n_iter = max(1, math.ceil(math.log(tol / width) / math.log(_GOLDEN))) if width > tol else 0
    c = b - _GOLDEN * (b - a)
    d = a + _GOLDEN * (b - a)
    fc, fd = fn(c), fn(d)
    for _ in range(n_iter):
        left = fc < fd
        a, b = np.where(left, a, c), np.where(left, d, b)
        new_c = np.where(left, b - _GOLDEN * (b - a), d)
        new_d = np.where(left, c, a + _GOLDEN * (b - a))
        x = np.where(left, new_c, new_d)
        fx = fn(x)
        fc, fd = np.where(left, fx, fd), np.where(left, fc, fx)
        c, d = new_c, new_d
    return 0.5 * (a + b)


def line_minimize(field_fn: FieldFn, origins, dirs, half_width=BRACKET, tol=SEARCH_TOL, max_shifts=6):
    """Minimize ``field_fn(origin + s dir)`` over s near 0 for many lines.

    The bracket [-half_width, half_width] slides along the line while the
    minimum sits on its edge. Returns (s, ok) where ``ok`` is False if the
    minimum never left the edge.
    """
    origins = np.asarray(origins, dtype=float)
    dirs = np.asarray(dirs, dtype=float)
    centre = np.zeros(len(origins))
    s = np.zeros(len(origins))
    active = np.ones(len(origins), dtype=bool)
    ok = np.zeros(len(origins), dtype=bool)
    for _ in range(max_shifts + 1):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        o, dvec, cen = origins[idx], dirs[idx], centre[idx]

        def f(x):
            return field_fn(o + x[:, None] * dvec)

        x = golden_section(f, cen - half_width, cen + half_width, tol)
        s[idx] = x
        at_low = x <= cen - half_width + 2 * tol
        at_high = x >= cen + half_width - 2 * tol
        done = ~(at_low | at_high)
        ok[idx[done]] = True
        centre[idx[at_low]] -= half_width
        centre[idx[at_high]] += half_width
        active[idx[done]] = False
    return s, ok


# --------------------------------------------------------------------------
# seeding
# --------------------------------------------------------------------------


def _cube_edges():
    """The 12 edges of [0, pi]^3 as (varying axis, {fixed axis: value})."""
    out = []
    for a in range(3):
        b, c = [i for i in range(3) if i != a]
        for vb, vc in itertools.product((0.0, np.pi), repeat=2):
            out.append((a, {b: vb, c: vc}))
    return out


def _edge_minima(
    field_fn, axis, fixed, min_depth=BIS_MIN_DEPTH, max_value=BIS_MAX_VALUE, merge=0.15 * np.pi, n_scan=257
):
    t = np.linspace(0.0, np.pi, n_scan)
    pts = np.zeros((n_scan, 3))
    pts[:, axis] = t
    for ax, val in fixed.items():
        pts[:, ax] = val
    vals = field_fn(pts)
    found = []
    for i in range(1, n_scan - 1):
        if vals[i] <= vals[i - 1] and vals[i] < vals[i + 1]:
            depth = min(vals[:i].max(), vals[i + 1 :].max()) - vals[i]
            if depth < min_depth or vals[i] > max_value:
                continue
            lo, hi = t[i - 1], t[i + 1]

            def f(x, base=pts[i]):
                q = np.repeat(base[None, :], len(x), axis=0)
                q[:, axis] = x
                return field_fn(q)

            x = float(golden_section(f, np.array([lo]), np.array([hi]))[0])
            point = pts[i].copy()
            point[axis] = x
            found.append((float(field_fn(point[None, :])[0]), point))
    # noise can split one dip into several nearby minima; keep the deepest
    found.sort(key=lambda vp: vp[0])
    kept: list = []
    for _, point in found:
        if all(abs(point[axis] - other[axis]) > merge for other in kept):
            kept.append(point)
    kept.sort(key=lambda pt: pt[axis])
    return kept


def initial_triangle(source, min_depth: float = BIS_MIN_DEPTH) -> TriMesh:
    """Triangle through the minima of |<gamma_0>| on the kx, ky, kz axes.

    ``source`` is a :class:`ScalarGrid` or a field callable.
    """
    field_fn = grid_field(source) if isinstance(source, ScalarGrid) else source
    verts = []
    for axis in range(3):
        fixed = {i: 0.0 for i in range(3) if i != axis}
        minima = _edge_minima(field_fn, axis, fixed, min_depth)
        if not minima:
            raise BISAbsentError(f"no band inversion crossing on the k{'xyz'[axis]} axis")
        verts.append(minima[0])
    return TriMesh(np.array(verts), np.array([[0, 1, 2]]))


def _pair_on_face(ids, pts):
    if len(ids) == 2:
        return [tuple(ids)]
    if len(ids) == 4:
        options = [((0, 1), (2, 3)), ((0, 2), (1, 3)), ((0, 3), (1, 2))]

        def cost(opt):
            return sum(np.linalg.norm(pts[ids[i]] - pts[ids[j]]) for i, j in opt)

        best = min(options, key=cost)
        return [(ids[i], ids[j]) for i, j in best]
    raise BISAbsentError(f"cannot pair {len(ids)} crossings on one octant face")


def boundary_loops(field_fn: FieldFn, min_depth: float = BIS_MIN_DEPTH):
    """Crossing points on the octant-cube edges, grouped into closed loops."""
    pts, faces_of = [], []
    for axis, fixed in _cube_edges():
        for x in _edge_minima(field_fn, axis, fixed, min_depth):
            pts.append(x)
            faces_of.append(list(fixed.items()))
    if not pts:
        return np.zeros((0, 3)), []
    pts = np.array(pts)
    on_face: dict = {}
    for i, fl in enumerate(faces_of):
        for key in fl:
            on_face.setdefault(key, []).append(i)
    adj = {i: [] for i in range(len(pts))}
    for ids in on_face.values():
        for i, j in _pair_on_face(ids, pts):
            adj[i].append(j)
            adj[j].append(i)
    loops, seen = [], set()
    for start in range(len(pts)):
        if start in seen:
            continue
        loop, prev, cur = [start], None, start
        seen.add(start)
        while True:
            nxt = [n for n in adj[cur] if n != prev]
            if not nxt:
                raise BISAbsentError("open crossing chain on the octant boundary")
            prev, cur = cur, nxt[0]
            if cur == start:
                break
            loop.append(cur)
            seen.add(cur)
        loops.append(loop)
    return pts, loops


def seed_mesh(field_fn: FieldFn, p: ModelParams, min_depth: float = BIS_MIN_DEPTH) -> TriMesh:
    """Coarse octant mesh: one triangle per 3-loop, a fan for longer loops."""
    pts, loops = boundary_loops(field_fn, min_depth)
    if not loops:
        raise BISAbsentError("no band inversion surface in the first octant")
    verts = list(pts)
    faces = []
    flags = [False] * len(pts)
    for loop in loops:
        if len(loop) == 3:
            faces.append(loop)
            continue
        ring = pts[loop]
        centre = ring.mean(axis=0)
        normal = np.zeros(3)
        for i in range(len(ring)):  # Newell
            normal += np.cross(ring[i], ring[(i + 1) % len(ring)])
        normal /= np.linalg.norm(normal)
        s, ok = line_minimize(field_fn, centre[None, :], normal[None, :])
        verts.append(np.clip(centre + s[0] * normal, 0.0, np.pi))
        flags.append(not ok[0])
        c = len(verts) - 1
        for i in range(len(loop)):
            faces.append([c, loop[i], loop[(i + 1) % len(loop)]])
    mesh = TriMesh(np.array(verts), np.array(faces), np.array(flags))
    return orient_faces(mesh, p)


# --------------------------------------------------------------------------
# refinement and stitching
# --------------------------------------------------------------------------


def refine(
    mesh: TriMesh,
    field_fn: FieldFn,
    iterations: int,
    bracket: float = BRACKET,
    tol: float = SEARCH_TOL,
) -> TriMesh:
    """Split every edge; put the new vertex at the field minimum along the normal.

    Midpoints of edges lying in an octant face (k_i = 0 or pi) search
    within that plane so the octant boundary is preserved for mirroring.
    """
    for _ in range(iterations):
        V, F = mesh.vertices, mesh.faces
        edges, inv = mesh.edges()
        fn = mesh.face_normals(periodic=False)
        en = np.zeros((len(edges), 3))
        for i in range(3):
            np.add.at(en, inv[:, i], fn)
        a, b = V[edges[:, 0]], V[edges[:, 1]]
        mid = 0.5 * (a + b)
        for c in range(3):
            for val in (0.0, np.pi):
                pinned = (np.abs(a[:, c] - val) < _ON_PLANE) & (np.abs(b[:, c] - val) < _ON_PLANE)
                en[pinned, c] = 0.0
                mid[pinned, c] = val
        norm = np.linalg.norm(en, axis=1)
        good = norm > 1e-12
        en[good] /= norm[good, None]
        s, ok = line_minimize(field_fn, mid[good], en[good], bracket, tol)
        new = mid.copy()
        new[good] = np.clip(mid[good] + s[:, None] * en[good], 0.0, np.pi)
        bad = ~good
        bad[np.flatnonzero(good)[~ok]] = True
        new[bad] = mid[bad]
        base = len(V)
        e01, e12, e20 = (inv[:, i] + base for i in range(3))
        f0, f1, f2 = F[:, 0], F[:, 1], F[:, 2]
        faces = np.concatenate(
            [
                np.stack([f0, e01, e20], axis=1),
                np.stack([e01, f1, e12], axis=1),
                np.stack([e20, e12, f2], axis=1),
                np.stack([e01, e12, e20], axis=1),
            ]
        )
        mesh = TriMesh(np.vstack([V, new]), faces, np.concatenate([mesh.flags, bad]))
    return mesh


def _snap_boundary(v):
    v = wrap_momentum(v)
    v[np.abs(v + np.pi) < _ON_PLANE] = -np.pi
    v[np.abs(v - np.pi) < _ON_PLANE] = -np.pi
    v[np.abs(v) < _ON_PLANE] = 0.0
    return v


def reflect_stitch(mesh: TriMesh, tol: float = 1e-9) -> TriMesh:
    """Mirror an octant mesh into all eight octants and weld the seams."""
    verts, faces, flags = [], [], []
    offset = 0
    for signs in itertools.product((1.0, -1.0), repeat=3):
        s = np.array(signs)
        verts.append(_snap_boundary(mesh.vertices * s))
        f = mesh.faces if np.prod(s) > 0 else mesh.faces[:, ::-1]
        faces.append(f + offset)
        flags.append(mesh.flags)
        offset += mesh.n_vertices
    V = np.vstack(verts)
    F = np.vstack(faces)
    flg = np.concatenate(flags)

    tree = cKDTree(V + np.pi, boxsize=2 * np.pi + 1e-12)
    pairs = tree.query_pairs(r=tol, output_type="ndarray")
    parent = np.arange(len(V))

    def find(i):
        root = i
        while parent[root] != root:
            root = parent[root]
        while parent[i] != root:
            parent[i], i = root, parent[i]
        return root

    for i, j in pairs:
        ri, rj = find(i), find(j)
        if ri != rj:
            parent[max(ri, rj)] = min(ri, rj)
    roots = np.array([find(i) for i in range(len(V))])
    uniq, remap = np.unique(roots, return_inverse=True)
    newF = remap[F]
    keep = (newF[:, 0] != newF[:, 1]) & (newF[:, 1] != newF[:, 2]) & (newF[:, 2] != newF[:, 0])
    newF = newF[keep]
    newflags = np.zeros(len(uniq), dtype=bool)
    np.logical_or.at(newflags, remap, flg)
    out = TriMesh(V[uniq], newF, newflags)
    counts = out.edge_face_counts()
    if np.any(counts != 2):
        e, _ = out.edges()
        seam = e[counts != 2]
        raise StitchError(f"{len(seam)} edges do not border exactly two faces", seam.tolist())
    if not out.is_consistently_oriented():
        raise StitchError("inconsistent face orientation across seams")
    return out


@dataclass(frozen=True)
class MeshSettings:
    levels: int = 5
    source: str = "exact"  # "exact" or "grid"
    grid_step: float = GRID_STEP
    smooth_width: float = 0.0
    bracket: float = BRACKET
    tol: float = SEARCH_TOL
    min_depth: float = BIS_MIN_DEPTH

    def __post_init__(self):
        if self.source not in ("exact", "grid"):
            raise ValueError(f"mesh source must be 'exact' or 'grid', got {self.source!r}")
        if self.levels < 0:
            raise ValueError("refinement levels must be nonnegative")


def bis_field(p: ModelParams, q: QuenchSpec | None = None, settings: MeshSettings = MeshSettings(), averager=None):
    """The field the mesh is fitted to: exact, or sampled + smoothed grid."""
    if settings.source == "exact" and averager is None:
        return exact_field(p, q)
    grid = sample_octant(p, q, settings.grid_step, averager=averager)
    return grid_field(smooth(grid, settings.smooth_width))


def octant_mesh(p: ModelParams, q: QuenchSpec | None = None, settings: MeshSettings = MeshSettings(), averager=None):
    f = bis_field(p, q, settings, averager)
    seed = seed_mesh(f, p, settings.min_depth)
    return refine(seed, f, settings.levels, settings.bracket, settings.tol)


def reconstruct_bis(
    p: ModelParams,
    q: QuenchSpec | None = None,
    settings: MeshSettings = MeshSettings(),
    averager=None,
) -> TriMesh:
    """Full closed BIS mesh over the Brillouin zone."""
    return reflect_stitch(octant_mesh(p, q, settings, averager))


# --------------------------------------------------------------------------
# export
# --------------------------------------------------------------------------


def write_obj(mesh: TriMesh, path) -> Path:
    path = Path(path)
    lines = ["# band inversion surface; coordinates in rad"]
    lines += [f"v {x:.12g} {y:.12g} {z:.12g}" for x, y, z in mesh.vertices]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.faces]
    path.write_text("\n".join(lines) + "\n")
    return path


def read_obj(path) -> TriMesh:
    verts, faces = [], []
    for line in Path(path).read_text().splitlines():
        parts = line.split()
        if not parts or parts[0].startswith("#"):
            continue
        if parts[0] == "v":
            verts.append([float(x) for x in parts[1:4]])
        elif parts[0] == "f":
            faces.append([int(x.split("/")[0]) - 1 for x in parts[1:4]])
    return TriMesh(np.array(verts), np.array(faces))


def write_sidecar(mesh: TriMesh, p: ModelParams, path) -> Path:
    """Per-vertex h_0 residuals and search flags as JSON."""
    path = Path(path)
    res = mesh.residuals(p)
    payload = {
        "n_vertices": mesh.n_vertices,
        "n_faces": mesh.n_faces,
        "euler_characteristic": mesh.euler_characteristic(),
        "max_abs_h0[t0]": float(np.max(np.abs(res))) if res.size else 0.0,
        "h0_residual[t0]": [round(float(r), 12) for r in res],
        "flagged_vertices": np.flatnonzero(mesh.flags).tolist(),
    }
    path.write_text(json.dumps(payload, indent=1, sort_keys=True) + "\n")
    return path
