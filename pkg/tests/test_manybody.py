from math import comb

import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings
from hypothesis import strategies as st

from quinticmf.fock import FockBasis, FockVector, basis_vector, product_state, vacuum
from quinticmf.manybody import (DensityMatrix, build_sector_hamiltonian, make_setup, mean_field_error,
                                mean_field_run, propagate, reduced_density, regularization_gap,
                                trace_distance)
from quinticmf.potentials import InteractionTensor, build_kernel, interaction_tensor
from quinticmf.spectral import lowest_modes, make_grid


def random_density(K, rng, rank=None):
    A = rng.normal(size=(K, rank or K)) + 1j * rng.normal(size=(K, rank or K))
    g = A @ A.conj().T
    return DensityMatrix(g / np.trace(g).real)


def test_free_hamiltonian_spectrum(desk):
    fb = FockBasis(2, 5)
    free = InteractionTensor(desk.basis, np.zeros((2,) * 6, dtype=complex))
    H = build_sector_hamiltonian(5, free, fb)
    occ = fb.occupations[fb.sector(5)]
    np.testing.assert_allclose(np.sort(np.linalg.eigvalsh(H.matrix)), np.sort(occ @ desk.basis.eps), atol=1e-14)


def test_single_mode_three_particles():
    g = make_grid(1, 16, 2 * np.pi)
    b = lowest_modes(g, 1)
    t = interaction_tensor(build_kernel(g, 0.25), b)
    H = build_sector_hamiltonian(3, t, FockBasis(1, 3))
    assert H.matrix[0, 0].real == pytest.approx(t.entries.ravel()[0].real / 9, rel=1e-14)


def test_sector_hamiltonian_hermitian_and_range(desk):
    g = make_grid(1, 16, 2 * np.pi)
    t = interaction_tensor(build_kernel(g, 0.25), lowest_modes(g, 3))
    H = build_sector_hamiltonian(6, t, FockBasis(3, 6))
    assert H.hermiticity_residual() <= 1e-12
    assert H.dim == comb(6 + 3 - 1, 3 - 1)
    with pytest.raises(ValueError):
        build_sector_hamiltonian(7, desk.tensor, FockBasis(2, 6))


def test_propagate_zero_time(desk):
    fb = FockBasis(2, 6)
    H = build_sector_hamiltonian(6, desk.tensor, fb)
    psi = product_state(desk.phi0, 6, fb)
    np.testing.assert_array_equal(propagate(H, psi, 0.0).amplitudes, psi.amplitudes)


def test_propagate_eigenvector_phase(desk):
    fb = FockBasis(2, 6)
    H = build_sector_hamiltonian(6, desk.tensor, fb)
    w, V = np.linalg.eigh(H.matrix)
    psi = H.embed(V[:, 2])
    out = propagate(H, psi, 0.7)
    np.testing.assert_allclose(out.amplitudes, np.exp(-0.7j * w[2]) * psi.amplitudes, atol=1e-12)


def test_propagate_matches_dense_expm():
    g = make_grid(1, 16, 2 * np.pi)
    t = interaction_tensor(build_kernel(g, 0.25), lowest_modes(g, 4))
    fb = FockBasis(4, 9)
    H = build_sector_hamiltonian(9, t, fb)
    assert H.dim <= 512
    rng = np.random.default_rng(1)
    x = rng.normal(size=H.dim) + 1j * rng.normal(size=H.dim)
    x /= np.linalg.norm(x)
    out = propagate(H, H.embed(x), 0.9)
    ref = scipy.linalg.expm(-0.9j * H.matrix) @ x
    np.testing.assert_allclose(out.amplitudes[H.sector], ref, atol=1e-9)
    assert out.norm() == pytest.approx(1.0, abs=1e-10)
    assert H.expectation(out) == pytest.approx(H.expectation(H.embed(x)), abs=1e-8)


def test_propagate_rejects_foreign_sector(desk):
    fb = FockBasis(2, 6)
    H = build_sector_hamiltonian(6, desk.tensor, fb)
    with pytest.raises(ValueError):
        propagate(H, vacuum(fb), 0.1)


def test_product_state_density(desk):
    fb = FockBasis(2, 10)
    gamma = reduced_density(product_state(desk.phi0, 10, fb))
    np.testing.assert_allclose(gamma.matrix, np.outer(desk.phi0, desk.phi0.conj()), atol=1e-12)
    assert trace_distance(gamma, DensityMatrix.pure(desk.phi0)) <= 1e-12


def test_cat_state_density():
    fb = FockBasis(2, 2)
    psi = FockVector(fb, (basis_vector(fb, (2, 0)).amplitudes + basis_vector(fb, (0, 2)).amplitudes) / np.sqrt(2))
    np.testing.assert_allclose(reduced_density(psi).matrix, np.diag([0.5, 0.5]), atol=1e-15)


def test_reduced_density_rejects_vacuum():
    with pytest.raises(ValueError):
        reduced_density(vacuum(FockBasis(2, 3)))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_reduced_density_invariants(seed):
    rng = np.random.default_rng(seed)
    fb = FockBasis(3, 5)
    v = rng.normal(size=fb.dim) + 1j * rng.normal(size=fb.dim)
    v[0] = 0
    reduced_density(FockVector(fb, v)).check()


def test_trace_distance_basic():
    a, b = np.array([1, 0]), np.array([0, 1j])
    assert trace_distance(DensityMatrix.pure(a), DensityMatrix.pure(a)) == 0
    assert trace_distance(DensityMatrix.pure(a), DensityMatrix.pure(b)) == pytest.approx(2.0, abs=1e-15)
    with pytest.raises(ValueError):
        trace_distance(DensityMatrix.pure(a), DensityMatrix.pure(np.ones(3)))


def test_trace_distance_eigen_oracle(rng):
    g1, g2 = random_density(4, rng), random_density(4, rng)
    oracle = np.sum(np.abs(scipy.linalg.eigvals(g1.matrix - g2.matrix)))
    assert trace_distance(g1, g2) == pytest.approx(oracle.real, abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_trace_distance_metric(seed):
    rng = np.random.default_rng(seed)
    a, b, c = (random_density(3, rng) for _ in range(3))
    assert trace_distance(a, b) == pytest.approx(trace_distance(b, a), abs=1e-14)
    assert trace_distance(a, c) <= trace_distance(a, b) + trace_distance(b, c) + 1e-13


def test_gap_trivial_cases(desk):
    assert regularization_gap(6, 0.3, 0.3, 0.4, desk) == 0
    assert regularization_gap(6, 0.3, 0.5, 0.0, desk) == 0
    with pytest.raises(ValueError):
        regularization_gap(6, 0.1, 0.3, 0.4, desk)


def test_gap_linear_in_t(desk):
    floor = desk.grid.h / 2
    gaps = [regularization_gap(8, 0.25, floor, t, desk) for t in (0.1, 0.2, 0.4)]
    ratio = [g / t for g, t in zip(gaps, (0.1, 0.2, 0.4))]
    assert max(ratio) / min(ratio) < 1.01
    np.testing.assert_allclose(gaps, [0.0799631694199617, 0.15979115839476582, 0.3185023634734481], rtol=1e-8)


@pytest.mark.xfail(strict=True, reason="gap grows linearly in t at desk scale, so gap^2/t varies by 4x "
                                       "over t in {0.1, 0.2, 0.4}")
def test_gap_squared_over_t_within_factor_two(desk):
    floor = desk.grid.h / 2
    vals = [regularization_gap(8, 0.25, floor, t, desk) ** 2 / t for t in (0.1, 0.2, 0.4)]
    assert max(vals) / min(vals) <= 2


def test_gap_shrinks_toward_floor(desk):
    floor = desk.grid.h / 2
    gaps = [regularization_gap(8, a, floor, 0.4, desk) for a in (0.5, 0.4, 0.3, 0.25, 0.22, floor)]
    assert np.all(np.diff(gaps) < 0) and gaps[-1] == 0


def test_density_gap_bounded_by_state_gap(desk):
    floor = desk.grid.h / 2
    fb = FockBasis(2, 8)
    psi0 = product_state(desk.phi0, 8, fb)
    states = [propagate(build_sector_hamiltonian(8, desk.tensor_for(a), fb), psi0, 0.4) for a in (0.3, floor)]
    dist = trace_distance(reduced_density(states[0]), reduced_density(states[1]))
    assert dist <= 2 * np.linalg.norm(states[0].amplitudes - states[1].amplitudes)


def test_mean_field_initial_error(desk):
    assert mean_field_error(8, 0.0, desk) <= 1e-12


def test_mean_field_record_fields(desk):
    rec = mean_field_run(4, 0.1, desk)
    assert set(rec) == {"N", "K", "eta", "alpha", "t", "trace_distance", "mass", "energy", "runtime_ms"}
    assert rec["mass"] == pytest.approx(1.0, abs=1e-10)


def test_mean_field_error_decreases(desk):
    errs = [mean_field_error(N, 0.5, desk) for N in (4, 8, 16, 32)]
    assert np.all(np.diff(errs) < 0)


def test_make_setup_validates_phi0():
    with pytest.raises(ValueError):
        make_setup(phi0=(1.0, 0.0, 0.0))
