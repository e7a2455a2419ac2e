import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from chiralquench import bismesh as bm
from chiralquench import invariants as inv
from chiralquench import kernels
from chiralquench.dynamics import QuenchSpec
from chiralquench.model import ModelParams

unit = (
    st.tuples(*[st.floats(-1, 1, allow_nan=False)] * 3)
    .map(np.array)
    .filter(lambda v: np.linalg.norm(v) > 0.1)
    .map(lambda v: v / np.linalg.norm(v))
)


def _mesh(p, level=3):
    return bm.reconstruct_bis(p, QuenchSpec(0), bm.MeshSettings(levels=level))


@given(unit, unit, unit, unit)
def test_solid_angle_additivity(a, b, c, d):
    # triangle abc split at an interior point d adds up; also antisymmetry
    m = a + b + c
    if np.linalg.norm(m) < 0.3 or min(a @ b, b @ c, c @ a) < -0.5:
        return
    d = m / np.linalg.norm(m)
    A = lambda x, y, z: inv.face_solid_angles(x[None], y[None], z[None])[0]  # noqa: E731
    whole = A(a, b, c)
    parts = A(a, b, d) + A(b, c, d) + A(c, a, d)
    assert whole == pytest.approx(parts, abs=1e-9)
    assert A(a, c, b) == pytest.approx(-whole, abs=1e-12)


def test_octant_solid_angle():
    e = np.eye(3)
    assert inv.face_solid_angles(e[:1], e[1:2], e[2:])[0] == pytest.approx(math.pi / 2)


@given(unit, unit, unit)
def test_wide_faces_split_consistently(a, b, c):
    if min(np.linalg.norm(a + b), np.linalg.norm(b + c), np.linalg.norm(c + a)) < 1e-3:
        return
    if abs(np.linalg.det(np.stack([a, b, c]))) < 1e-6:
        return
    got = inv.face_solid_angles(a[None], b[None], c[None])[0]
    ref = kernels.solid_angles(a[None], b[None], c[None])[0]
    # both are the signed area of the same geodesic triangle, modulo 4 pi
    assert math.remainder(got - ref, 4 * math.pi) == pytest.approx(0, abs=1e-8)


def test_unit_sphere_degree_one():
    from chiralquench.charges import icosphere

    sph = icosphere(2)
    tex = inv.TextureField.from_raw(sph.vertices)
    assert inv.winding_W(sph, tex).value == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize("m_z,nu", [(1.4, 1), (0.0, -2), (-1.4, 1)])
def test_winding_matches_equilibrium(m_z, nu):
    p = ModelParams(m_z, 1.0, 0.2)
    mesh = _mesh(p)
    tex = inv.g_field(mesh, p)
    assert inv.winding_W(mesh, tex).value == pytest.approx(nu, abs=1e-6)


@pytest.mark.parametrize("m_z", [1.4, 0.0])
def test_g_field_matches_analytic_direction(m_z):
    p = ModelParams(m_z, 1.0, 0.2)
    mesh = _mesh(p)
    g = inv.g_field(mesh, p).vectors
    cosang = np.sum(g * inv.analytic_g(mesh, p), axis=1)
    assert np.degrees(np.arccos(np.clip(cosang.min(), -1, 1))) < 1.0


@pytest.mark.parametrize("m", [0.1, 0.3, 0.5, 0.7])
@pytest.mark.parametrize("m_z,n", [(1.4, 1), (0.0, -2)])
def test_wsb_closed_form_uniform_g4(m, m_z, n):
    p = ModelParams(m_z, 1.0, 0.2)
    mesh = _mesh(p)
    g3 = inv.analytic_g(mesh, p) * math.sqrt(1 - m * m)
    vec = np.hstack([g3, np.full((len(g3), 1), m)])
    tex = inv.TextureField(vec, vec, np.zeros(len(vec), bool))
    assert inv.winding_WSB(mesh, tex).value == pytest.approx(inv.closed_form_WSB(n, m), rel=0.02)


def test_wsb_reduces_to_w_without_h4():
    p = ModelParams(1.4, 1.0, 0.2)
    mesh = _mesh(p)
    tex = inv.g_field(mesh, p)
    assert inv.winding_WSB(mesh, tex).value == pytest.approx(inv.winding_W(mesh, tex).value, abs=1e-9)


def test_wsb_decreases_with_h4():
    vals = []
    for h4 in (0.0, 0.05, 0.1, 0.2, 0.4):
        p = ModelParams(1.4, 1.0, 0.2, h4)
        mesh = _mesh(p.replace(h_4=0.0))
        vals.append(inv.winding_WSB(mesh, inv.g_field(mesh, p)).value)
    assert vals[0] == pytest.approx(1.0, abs=1e-6)
    assert all(a > b for a, b in zip(vals, vals[1:]))
    assert 0 < vals[-1] < 1


def test_closed_form_wsb_limits():
    assert inv.closed_form_WSB(1, 0.0) == pytest.approx(1.0)
    assert inv.closed_form_WSB(-2, 0.0) == pytest.approx(-2.0)
    with pytest.raises(ValueError):
        inv.closed_form_WSB(1, 1.0)


def test_flagged_texture_rejected():
    p = ModelParams(1.4, 1.0, 0.2)
    mesh = _mesh(p, 1)
    raw = inv.analytic_g(mesh, p)
    raw[0] = 0.0
    tex = inv.TextureField.from_raw(raw)
    assert tex.flagged[0]
    with pytest.raises(inv.IllConditionedFaceError) as err:
        inv.winding_W(mesh, tex)
    assert err.value.faces


def test_f_field_deep_quench_winding():
    p = ModelParams(1.4, 1.0, 1.0)
    mesh = _mesh(p)
    assert inv.winding_W(mesh, inv.f_field(mesh, p)).value == pytest.approx(1.0, abs=1e-6)
    assert inv.winding_W(mesh, inv.f_field(mesh, p, 4.0)).value == pytest.approx(1.0, abs=1e-6)
    assert inv.winding_W(mesh, inv.f_field(mesh, p, 2.0)).value == pytest.approx(0.0, abs=1e-6)


def test_transition_scan_matches_closed_form():
    p = ModelParams(1.4, 1.0, 1.0)
    m_c = inv.transition_scan(p)
    assert m_c == pytest.approx(inv.critical_depth_closed_form(p), abs=0.005)
    assert inv.critical_depth_closed_form(p) == pytest.approx(2.653, abs=1e-3)


def test_transition_absent_outside_range():
    with pytest.raises(inv.TransitionNotFoundError):
        inv.transition_scan(ModelParams(1.4, 1.0, 1.0), (3.5, 6.0))


def test_diagonal_point_on_surface():
    p = ModelParams(1.4, 1.0, 1.0)
    k0 = inv.diagonal_bis_point(p)
    assert k0[0] == pytest.approx(-math.acos(1.4 / 3), abs=1e-12)


def test_winding_json(tmp_path):
    import json

    r = inv.WindingResult(0.98, np.ones(3), 0.01)
    d = json.loads(r.write_json(tmp_path / "w.json").read_text())
    assert d == {"value": 0.98, "nearest_integer": 1, "error_estimate": 0.01, "n_faces": 3}


@pytest.mark.parametrize("h4", [0.05, 0.2])
def test_wsb_reflection_about_equator(h4):
    base = ModelParams(0.0, 1.0, 0.2)
    mesh = _mesh(base)
    up = inv.winding_WSB(mesh, inv.g_field(mesh, base.replace(h_4=h4))).value
    down = inv.winding_WSB(mesh, inv.g_field(mesh, base.replace(h_4=-h4))).value
    assert up + down == pytest.approx(2 * -2, abs=1e-9)
    assert -2 < up < 0
