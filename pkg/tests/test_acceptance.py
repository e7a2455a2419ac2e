"""End-to-end acceptance checks, one test per criterion.

Each test records a single PASS/FAIL line; the lines are printed in the
terminal summary (see conftest.py) and when this file is run directly:

    python3 tests/test_acceptance.py
"""

from __future__ import annotations

import json
import math
import tempfile
import time
from pathlib import Path

import numpy as np
import pytest

from chiralquench import bismesh as bm
from chiralquench import charges as ch
from chiralquench import cli
from chiralquench import invariants as inv
from chiralquench import noise as nz
from chiralquench.dynamics import (
    DephasingModel,
    QuenchSpec,
    WindowedAverager,
    dense_evolution_oracle,
    evolve_polarization,
    t_max,
    time_avg_batch,
    time_avg_polarization,
    windowed_avg_polarization,
)
from chiralquench.model import GAMMA, ModelParams, h_vector
from chiralquench.prep import verify_pulse_roundtrip

RESULTS: dict[int, str] = {}

M_C = 2.653
DEEP = QuenchSpec(0)


def record(n: int, ok: bool, detail: str):
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {n}: {detail}"
    RESULTS[n] = line
    print(line)
    assert ok, line


# --------------------------------------------------------------------------


def test_criterion_1_phase_diagram():
    expected = {1.4: 1, 0.0: -2, -1.4: 1, 4.0: 0}
    parts, ok = [], True
    with tempfile.TemporaryDirectory() as tmp:
        for m_z, nu in expected.items():
            out = Path(tmp) / f"w{m_z}"
            t0 = time.perf_counter()
            code = cli.main(["winding", "--out", str(out), "--set", f"model.m_z={m_z}", "--set", "mesh.level=5"])
            dt = time.perf_counter() - t0
            W = json.loads((out / "winding.json").read_text())["W"] if code == 0 else math.nan
            good = code == 0 and abs(W - nu) < 0.1 and dt < 60
            ok &= good
            parts.append(f"m_z={m_z:+.1f}: W={W:+.4f} (nu3={nu:+d}, {dt:.1f}s)")
    record(1, ok, "; ".join(parts))


def test_criterion_2_single_point_average():
    p = ModelParams(1.4, 1.0, 0.2)
    k = np.array([0.1, 0.6, 0.1]) * np.pi
    exact = float(time_avg_polarization(k, p, DEEP)[0])

    # emulate the readout for 20 independent detector calibrations, each
    # with 200 Monte Carlo trials; the statistic is the median trial std
    rng = np.random.default_rng(2024)
    window = (0.0, t_max(p))
    stds = []
    for d in range(20):
        em = nz.ReadoutEmulator(nz.PhotonCalibration.draw(rng, (1000, 2000), 10000))
        rep = nz.mc_propagate(lambda g: em.window_average(k, p, DEEP, window, g), 200, seed=d)
        stds.append(rep.std)
    std = float(np.median(stds))
    lo, hi = 0.056 * 0.7, 0.056 * 1.3
    ok = round(exact, 3) == 0.460 and lo <= std <= hi
    record(2, ok, f"exact <gamma0>_0 = {exact:.5f} (0.460); noisy std median = {std:.4f} in [{lo:.4f}, {hi:.4f}]")


def test_criterion_3_symmetry_breaking():
    worst, ok = 0.0, True
    for m_z, n in ((1.4, 1), (0.0, -2)):
        p = ModelParams(m_z, 1.0, 0.2)
        mesh = bm.reconstruct_bis(p, DEEP, bm.MeshSettings(levels=5))
        g = inv.g_field(mesh, p).vectors
        for m in (0.1, 0.3, 0.5, 0.7):
            vec = np.hstack([g * math.sqrt(1 - m * m), np.full((len(g), 1), m)])
            tex = inv.TextureField(vec, vec, np.zeros(len(vec), bool))
            got = inv.winding_WSB(mesh, tex).value
            ref = inv.closed_form_WSB(n, m)
            rel = abs(got - ref) / abs(ref)
            worst = max(worst, rel)
            ok &= rel < 0.02

    trend = []
    base = ModelParams(1.4, 1.0, 0.2)
    mesh = bm.reconstruct_bis(base, DEEP, bm.MeshSettings(levels=4))
    for h4 in (0.0, 0.05, 0.1, 0.2, 0.4):
        for sign in (1, -1):
            p = base.replace(h_4=sign * h4)
            trend.append((h4, inv.winding_WSB(mesh, inv.g_field(mesh, p)).value))
    by_h4 = [w for h4, w in trend[::2]]
    # the weight is odd about the equator: W_SB(-h4) = 2n - W_SB(h4)
    mirror = all(abs(a[1] + b[1] - 2) < 1e-9 for a, b in zip(trend[::2], trend[1::2]))
    decreasing = all(a > b for a, b in zip(by_h4, by_h4[1:]))
    non_quantized = all(abs(w - round(w)) > 0.05 for w in by_h4[1:])
    ok &= decreasing and non_quantized and mirror and abs(by_h4[0] - 1) < 1e-6
    record(
        3,
        ok,
        f"max rel. deviation from closed form {100 * worst:.3f}% (<2%); "
        f"W_SB(|h4|=0,.05,.1,.2,.4) = {', '.join(f'{w:.3f}' for w in by_h4)}",
    )


def test_criterion_4_charges():
    p = ModelParams(1.4, 1.0, 1.0)
    recs = ch.find_charges(p)
    corners = all(min(abs(x), abs(x + np.pi)) < 1e-9 for r in recs for x in r.location)
    parity = all(r.value == (-1) ** sum(abs(x) > 1 for x in r.location) for r in recs)
    total = ch.enclosed_total(None, recs)
    # independent route: crossing parity against the reconstructed surface
    mesh = bm.reconstruct_bis(p, DEEP, bm.MeshSettings(levels=4))
    total_mesh = sum(r.value for r in recs if ch.enclosed_by_mesh(mesh, r.location, p))
    ok = len(recs) == 8 and corners and parity and total == 1 and total_mesh == 1
    vals = " ".join(f"{r.label}:{r.value:+d}" for r in sorted(recs, key=lambda r: r.label))
    record(4, ok, f"{len(recs)} charges [{vals}]; enclosed total {total:+d} (sign test), {total_mesh:+d} (mesh parity)")


def test_criterion_5_dynamical_transition():
    p = ModelParams(1.4, 1.0, 1.0)
    m_scan = inv.transition_scan(p)
    tr = ch.track_charges(p, np.linspace(6.0, 1.2, 25), ("O1", "O8"))
    m_track = tr.bis_crossings[0][0] if tr.bis_crossings else math.nan

    # noisy route: 10 calibrations x 100 trials of a line fit through 11 depths
    rng = np.random.default_rng(2025)
    k0 = inv.diagonal_bis_point(p)
    ms = np.linspace(2.2, 3.2, 11)
    means = []
    for d in range(10):
        cal = nz.PhotonCalibration.draw(rng)
        rep = nz.mc_propagate(lambda g: inv.transition_fit(p, ms, nz.NoisyAverager(cal, g), k0)[0], 100, seed=d)
        means.append(rep.mean)
    m_noisy = float(np.median(means))
    ok = abs(m_scan - M_C) <= 0.02 and abs(m_track - m_scan) <= 0.02 and 2.6 <= m_noisy <= 2.8
    record(
        5,
        ok,
        f"scan m_c = {m_scan:.4f}; O8 crosses at {m_track:.4f}; noisy m_c = {m_noisy:.3f} in [2.6, 2.8]",
    )


def test_criterion_6_oracle_equivalence():
    rng = np.random.default_rng(6)
    worst_evo = 0.0
    for _ in range(1000):
        p = ModelParams(rng.uniform(-4, 4), rng.uniform(0.2, 2), rng.uniform(0.05, 2), rng.uniform(-0.5, 0.5))
        k = rng.uniform(-np.pi, np.pi, 3)
        t = rng.uniform(0, 50)
        psi = rng.normal(size=4) + 1j * rng.normal(size=4)
        psi /= np.linalg.norm(psi)
        d = np.max(np.abs(evolve_polarization(k, p, psi, t) - dense_evolution_oracle(k, p, psi, t)))
        worst_evo = max(worst_evo, d)

    worst_avg = 0.0
    for _ in range(1000):
        p = ModelParams(rng.uniform(-4, 4), rng.uniform(0.2, 2), rng.uniform(0.05, 2), rng.uniform(-0.5, 0.5))
        k = rng.uniform(-np.pi, np.pi, 3)
        axis = int(rng.integers(0, 4))
        h = h_vector(k, p)
        ref = h[axis] * h / (h @ h)
        q = QuenchSpec(axis)
        d = max(
            np.max(np.abs(time_avg_polarization(k, p, q) - ref)),
            np.max(np.abs(time_avg_batch(k[None], p, q)[0] - ref)),
        )
        worst_avg = max(worst_avg, d)
    ok = worst_evo < 1e-10 and worst_avg < 1e-12
    record(6, ok, f"closed vs dense max diff {worst_evo:.2e} (<1e-10); deep-quench average max diff {worst_avg:.2e} (<1e-12)")


def test_criterion_7_dephasing_robustness():
    # oscillation-demo point: t_so = t_0, k = -0.6 pi (1, 1, 1), deep gamma_0 quench
    p = ModelParams(1.4, 1.0, 1.0)
    k = np.full(3, -0.6 * np.pi)
    tm = t_max(p)
    early = windowed_avg_polarization(k, p, DEEP, DephasingModel(0.0, 0.0, (0.0, tm)))
    worst = 0.0
    for rates in ((0.5, 0.01), (2.0, 0.05), (10.0, 1.0)):
        late = windowed_avg_polarization(k, p, DEEP, DephasingModel(*rates, (2 * tm, 3 * tm)))
        worst = max(worst, float(np.max(np.abs(late - early))))

    exact = ch.track_charges(p, np.linspace(6.0, 1.2, 25))
    damped = ch.track_charges(p, np.linspace(6.0, 1.2, 25), averager=WindowedAverager.dephased(p))
    m_exact = exact.bis_crossings[0][0] if exact.bis_crossings else math.nan
    m_damped = damped.bis_crossings[0][0] if damped.bis_crossings else math.nan
    ok = worst < 0.05 and abs(m_damped - m_exact) < 0.05
    record(
        7,
        ok,
        f"max |late - early| per component {worst:.4f} (<0.05); O8 crossing {m_exact:.4f} -> {m_damped:.4f} with dephasing",
    )


def test_criterion_8_property_suites():
    rng = np.random.default_rng(8)
    eye = np.eye(4)
    clifford = max(
        float(np.max(np.abs(GAMMA[i] @ GAMMA[j] + GAMMA[j] @ GAMMA[i] - 2 * eye * (i == j))))
        for i in range(5)
        for j in range(5)
    )

    closure = True
    for m_z in (1.4, 0.0, -1.4, 2.5, -0.5):
        mesh = bm.reconstruct_bis(ModelParams(m_z, 1.0, 0.5), DEEP, bm.MeshSettings(levels=3))
        chi = -4 if abs(m_z) < 1 else 2
        closure &= mesh.is_closed() and mesh.is_consistently_oriented() and mesh.euler_characteristic() == chi

    additivity = 0.0
    for _ in range(500):
        a, b, c = (v / np.linalg.norm(v) for v in rng.normal(size=(3, 3)))
        m = a + b + c
        if np.linalg.norm(m) < 0.5:
            continue
        d = m / np.linalg.norm(m)
        S = lambda x, y, z: inv.face_solid_angles(x[None], y[None], z[None])[0]  # noqa: E731
        additivity = max(additivity, abs(S(a, b, c) - S(a, b, d) - S(b, c, d) - S(c, a, d)))

    pulse = max(verify_pulse_roundtrip(rng.uniform(-3, 3, 5)) for _ in range(500))

    solve = 0.0
    for _ in range(500):
        cal = nz.PhotonCalibration.draw(rng)
        P = rng.dirichlet(np.ones(4))
        got, _ = nz.solve_populations(nz.expected_counts(P, cal), cal, clip=False)
        solve = max(solve, float(np.max(np.abs(got - P))) / cal.condition_number())

    ok = clifford < 1e-14 and closure and additivity < 1e-9 and pulse < 1e-10 and solve < 1e-12
    record(
        8,
        ok,
        f"clifford {clifford:.1e}; mesh closure {'ok' if closure else 'BROKEN'}; "
        f"solid-angle additivity {additivity:.1e}; pulse round trip {pulse:.1e}; population solve {solve:.1e}",
    )


if __name__ == "__main__":
    fns = [v for k, v in sorted(globals().items()) if k.startswith("test_criterion_")]
    failed = 0
    for fn in fns:
        try:
            fn()
        except AssertionError:
            failed += 1
    raise SystemExit(1 if failed else 0)
