import math
import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from chiralquench.dynamics import (
    DephasingModel,
    GapClosedWarning,
    QuenchSpec,
    WindowedAverager,
    dense_evolution_oracle,
    evolve_polarization,
    polarization,
    polarization_series,
    quench_state,
    t_max,
    time_avg_batch,
    time_avg_polarization,
    window_times,
    windowed_avg_polarization,
)
from chiralquench.model import ModelParams, h_vector

momentum = st.tuples(*[st.floats(-np.pi, np.pi, allow_nan=False)] * 3).map(np.array)
params = st.builds(
    ModelParams,
    m_z=st.floats(-4, 4),
    t_0=st.floats(0.2, 2),
    t_so=st.floats(0.05, 2),
    h_4=st.floats(-0.5, 0.5),
)


def _random_state(rng):
    psi = rng.normal(size=4) + 1j * rng.normal(size=4)
    return psi / np.linalg.norm(psi)


@given(momentum, params, st.floats(0, 50), st.integers(0, 2**32 - 1))
def test_closed_form_matches_dense(k, p, t, seed):
    psi = _random_state(np.random.default_rng(seed))
    a = evolve_polarization(k, p, psi, t)
    b = dense_evolution_oracle(k, p, psi, t)
    np.testing.assert_allclose(a, b, atol=1e-10)


@given(momentum, params, st.integers(0, 3))
def test_deep_quench_average_closed_form(k, p, axis):
    h = h_vector(k, p)
    E2 = h @ h
    if E2 < 1e-8:
        return
    avg = time_avg_polarization(k, p, QuenchSpec(axis))
    np.testing.assert_allclose(avg, h[axis] * h / E2, atol=1e-12)


@given(momentum, params, st.integers(0, 3), st.floats(0.2, 10))
def test_batch_average_matches_projectors(k, p, axis, m_i):
    h = h_vector(k, p)
    if h @ h < 1e-8:
        return
    q = QuenchSpec(axis, m_i)
    try:
        single = time_avg_polarization(k, p, q)
    except (ValueError, RuntimeError):
        return
    np.testing.assert_allclose(time_avg_batch(k[None], p, q)[0], single, atol=1e-10)


def test_reference_point_average():
    p = ModelParams(1.4, 1.0, 0.2)
    k = np.array([0.1, 0.6, 0.1]) * np.pi
    assert round(float(time_avg_polarization(k, p, QuenchSpec(0))[0]), 3) == 0.460


def test_long_window_converges_to_infinite_average():
    p = ModelParams(1.4, 1.0, 0.2)
    k = np.array([0.1, 0.6, 0.1]) * np.pi
    q = QuenchSpec(0)
    d = DephasingModel(0, 0, (0.0, 400.0))
    np.testing.assert_allclose(windowed_avg_polarization(k, p, q, d, 20000), time_avg_polarization(k, p, q), atol=5e-3)


def test_series_starts_at_initial_polarization():
    p = ModelParams()
    k = np.array([0.4, -0.2, 1.0])
    q = QuenchSpec(0, 2.0)
    s = polarization_series(k, p, q, np.array([0.0, 1.0]))
    np.testing.assert_allclose(s[0], polarization(quench_state(k, p, q)), atol=1e-12)
    assert np.linalg.norm(s[1]) == pytest.approx(1.0, abs=1e-10)


def test_gap_closed_warns():
    p = ModelParams(m_z=3.0)
    with pytest.warns(GapClosedWarning):
        out = time_avg_polarization(np.zeros(3), p, QuenchSpec(0))
    np.testing.assert_allclose(out, [1, 0, 0, 0, 0], atol=1e-12)


def test_t_max_value():
    p = ModelParams(1.4, 1.0, 0.2)
    expected = 2 / (math.sqrt(3) * 0.2 * math.sin(math.acos(1.4 / 3)))
    assert t_max(p) == pytest.approx(expected)
    with pytest.raises(ValueError):
        t_max(ModelParams(m_z=4.0))


def test_window_validation():
    with pytest.raises(ValueError):
        window_times((1.0, 1.0))
    with pytest.raises(ValueError):
        DephasingModel(-1.0, 0.0)
    with pytest.raises(ValueError):
        DephasingModel(0.0, 0.0, (2.0, 1.0))


@given(st.floats(0, 50), st.floats(0, 5))
def test_late_damped_window_matches_early_and_infinite(rate_fast, rate_slow):
    # oscillation-demo setting: t_so = t_0, k on the diagonal at -0.6 pi
    p = ModelParams(1.4, 1.0, 1.0)
    k = np.full(3, -0.6 * np.pi)
    q = QuenchSpec(0)
    tm = t_max(p)
    late = windowed_avg_polarization(k, p, q, DephasingModel(rate_fast, rate_slow, (2 * tm, 3 * tm)))
    early = WindowedAverager.early(p)(k[None], p, q)[0]
    assert np.max(np.abs(late - early)) < 0.05
    assert np.max(np.abs(late - time_avg_polarization(k, p, q))) < 0.05


def test_strong_damping_recovers_projector_average():
    p = ModelParams(1.4, 1.0, 1.0)
    k = np.array([-0.3, 0.5, -1.1])
    q = QuenchSpec(0)
    tm = t_max(p)
    late = windowed_avg_polarization(k, p, q, DephasingModel(500, 500, (2 * tm, 3 * tm)))
    np.testing.assert_allclose(late, time_avg_polarization(k, p, q), atol=1e-10)


def test_quench_spec_validation():
    with pytest.raises(ValueError):
        QuenchSpec(4)
    with pytest.raises(ValueError):
        QuenchSpec(0, -1.0)
    assert QuenchSpec().deep
    assert not QuenchSpec(1, 3.0).deep


@pytest.mark.parametrize(
    "m_z, t_so, expected",
    [(0.0, 1.0, 2 / math.sqrt(3)), (1.4, 0.2, 6.528)],
)
def test_t_max_values(m_z, t_so, expected):
    assert t_max(ModelParams(m_z=m_z, t_0=1.0, t_so=t_so)) == pytest.approx(expected, abs=1e-3)


def test_t_max_outside_band_raises():
    with pytest.raises(ValueError):
        t_max(ModelParams(m_z=3.0, t_0=1.0, t_so=1.0))
