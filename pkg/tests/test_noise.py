import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from chiralquench import noise as nz
from chiralquench.dynamics import QuenchSpec, t_max, time_avg_polarization
from chiralquench.model import GAMMA, ModelParams

counts4 = st.tuples(*[st.floats(1000, 2000)] * 4)
simplex = (
    st.lists(st.floats(0, 1), min_size=4, max_size=4)
    .filter(lambda v: sum(v) > 0.1)
    .map(lambda v: np.array(v) / sum(v))
)


@pytest.mark.parametrize("j", range(5))
def test_readout_unitaries_map_z_basis_onto_gamma(j):
    U = nz.READOUT_U[j]
    Z = np.diag(nz.READOUT_SIGNS[j]).astype(complex)
    np.testing.assert_allclose(U.conj().T @ Z @ U, GAMMA[j], atol=1e-14)
    np.testing.assert_allclose(U @ U.conj().T, np.eye(4), atol=1e-14)


@given(simplex, counts4)
def test_population_solve_roundtrip(P, N):
    cal = nz.PhotonCalibration(N)
    if cal.condition_number() > 1e6:
        return
    got, mag = nz.solve_populations(nz.expected_counts(P, cal), cal, clip=False)
    np.testing.assert_allclose(got, P, atol=1e-9 * cal.condition_number())
    assert mag == 0


@given(simplex, counts4)
def test_clipped_solution_is_a_distribution(P, N):
    cal = nz.PhotonCalibration(N)
    if cal.condition_number() > 1e6:
        return
    noisy = nz.noisy_counts(nz.expected_counts(P, cal), np.random.default_rng(0))
    got, mag = nz.solve_populations(noisy, cal)
    assert np.all(got >= 0) and got.sum() == pytest.approx(1.0)
    assert mag >= 0


def test_density_readout_recovers_polarization():
    rng = np.random.default_rng(1)
    psi = rng.normal(size=4) + 1j * rng.normal(size=4)
    psi /= np.linalg.norm(psi)
    rho = np.outer(psi, psi.conj())
    for j in range(5):
        pops = nz.readout_populations(rho, j)
        assert pops @ nz.READOUT_SIGNS[j] == pytest.approx(np.vdot(psi, GAMMA[j] @ psi).real, abs=1e-12)


def test_singular_design_detected():
    with pytest.raises(nz.SingularDesignError):
        nz.solve_populations(np.ones(4), nz.PhotonCalibration((1500, 1500, 1500, 1500)))


def test_bad_populations_rejected():
    cal = nz.PhotonCalibration((1000, 1200, 1500, 1900))
    with pytest.raises(nz.PopulationError):
        nz.expected_counts([0.5, 0.5, 0.5, 0.0], cal)
    with pytest.raises(nz.PopulationError):
        nz.expected_counts([1.2, -0.2, 0, 0], cal)
    with pytest.raises(ValueError):
        nz.PhotonCalibration((1, 2, 3))


def _unclipped_std(pops, cal, j, rng, n_trials=3000):
    mean = nz.expected_counts(pops, cal)
    vals = []
    for _ in range(n_trials):
        P, _ = nz.solve_populations(nz.noisy_counts(mean, rng), cal, clip=False)
        vals.append(np.mean(P @ nz.READOUT_SIGNS[j]))
    return float(np.std(vals, ddof=1))


@pytest.mark.parametrize("j", [0, 1, 3])
def test_linear_propagation_matches_sampling(j):
    rng = np.random.default_rng(7)
    pops = rng.dirichlet(np.ones(4), size=16)
    cal = nz.PhotonCalibration((1100, 1400, 1650, 1950))
    lin = nz.polarization_std_linear(pops, cal, j)
    # 3000 trials: relative sampling error of a std is ~1.3 %
    assert _unclipped_std(pops, cal, j, rng) == pytest.approx(lin, rel=0.06)


@given(st.integers(1, 50))
def test_linear_std_scales_as_inverse_sqrt_repetitions(factor):
    pops = np.random.default_rng(2).dirichlet(np.ones(4), size=8)
    cal = nz.PhotonCalibration((1100, 1400, 1650, 1950))
    a = nz.polarization_std_linear(pops, cal, 0)
    b = nz.polarization_std_linear(pops, cal.scaled(cal.repetitions * factor), 0)
    assert a / b == pytest.approx(math.sqrt(factor), rel=1e-9)


def test_sampled_std_scales_with_shots():
    rng = np.random.default_rng(8)
    pops = rng.dirichlet(np.ones(4), size=8)
    cal = nz.PhotonCalibration((1100, 1400, 1650, 1950))
    s1 = _unclipped_std(pops, cal, 0, rng, 2000)
    s4 = _unclipped_std(pops, cal.scaled(4 * cal.repetitions), 0, rng, 2000)
    assert s1 / s4 == pytest.approx(2.0, rel=0.08)


def test_poisson_mode():
    rng = np.random.default_rng(0)
    x = nz.noisy_counts(np.full(20000, 1500.0), rng, "poisson")
    assert np.all(x == np.round(x))
    assert np.var(x) == pytest.approx(1500, rel=0.05)
    with pytest.raises(ValueError):
        nz.noisy_counts(np.ones(2), rng, "gamma")


def test_mc_propagate_is_thread_independent():
    fn = lambda g: g.normal()  # noqa: E731
    a = nz.mc_propagate(fn, 50, seed=3, threads=1)
    b = nz.mc_propagate(fn, 50, seed=3, threads=4)
    np.testing.assert_array_equal(a.values, b.values)
    assert a.insufficient


def test_mc_propagate_counts_failures():
    def fn(g):
        x = g.uniform()
        if x < 0.3:
            raise ValueError("bad trial")
        return x

    rep = nz.mc_propagate(fn, 400, seed=1)
    assert 0.2 < rep.failure_fraction < 0.4
    assert np.isfinite(rep.mean) and rep.mean > 0.3
    assert rep.to_dict()["n_failed"] == rep.n_failed


def test_noisy_averager_is_unbiased_at_high_counts():
    p = ModelParams()
    k = np.array([[0.1, 0.6, 0.1]]) * np.pi
    q = QuenchSpec(0)
    cal = nz.PhotonCalibration((1100, 1400, 1650, 1950)).scaled(10**9)
    av = nz.NoisyAverager(cal, np.random.default_rng(0))
    np.testing.assert_allclose(av(k, p, q)[0], time_avg_polarization(k[0], p, q), atol=2e-3)


def test_emulator_window_average_near_exact_with_many_shots():
    p = ModelParams()
    k = np.array([0.1, 0.6, 0.1]) * np.pi
    cal = nz.PhotonCalibration((1100, 1400, 1650, 1950)).scaled(10**9)
    em = nz.ReadoutEmulator(cal)
    from chiralquench.dynamics import WindowedAverager

    expect = WindowedAverager.early(p)(k[None], p, QuenchSpec(0))[0, 0]
    got = em.window_average(k, p, QuenchSpec(0), (0, t_max(p)), np.random.default_rng(0))
    assert got == pytest.approx(expect, abs=5e-3)


def test_expected_counts_pure_levels():
    cal = nz.PhotonCalibration((1100.0, 1400.0, 1650.0, 1950.0))
    n1, n2, n3, n4 = cal.N
    assert np.allclose(nz.expected_counts([1, 0, 0, 0], cal), [n1, n3, n2, n3])
    assert np.allclose(nz.expected_counts([0, 0, 0, 1], cal), [n4, n2, n4, n1])
