import json
from math import comb

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from quinticmf.fock import (FockBasis, FockVector, annihilation_operator, apply_annihilation, apply_creation,
                            basis_vector, ccr_residual, coherent_state, creation_operator, d_N,
                            displaced_number_amplitudes, interior_vectors, moment, number_operator,
                            occupation_csv, product_state, project_sector, second_quantization, vacuum,
                            vector_to_json, weyl_apply, weyl_operator, weyl_shift_residual,
                            weyl_unitarity_residual)


def random_vector(basis, rng):
    v = rng.normal(size=basis.dim) + 1j * rng.normal(size=basis.dim)
    return FockVector(basis, v / np.linalg.norm(v))


@pytest.mark.parametrize("K,N_max", [(1, 5), (2, 7), (3, 6), (4, 3)])
def test_dimension_and_ranking(K, N_max):
    b = FockBasis(K, N_max)
    assert b.dim == comb(N_max + K, K)
    for i in range(b.dim):
        assert b.rank(b.unrank(i)) == i
    assert np.all(np.diff(b.totals) >= 0)


def test_sector_projections_idempotent_orthogonal(rng):
    b = FockBasis(2, 6)
    v = random_vector(b, rng)
    for n in range(7):
        p = project_sector(v, n)
        np.testing.assert_array_equal(project_sector(p, n).amplitudes, p.amplitudes)
        for m in range(7):
            if m != n:
                assert np.all(project_sector(p, m).amplitudes == 0)
    total = sum(project_sector(v, n).amplitudes for n in range(7))
    np.testing.assert_array_equal(total, v.amplitudes)
    with pytest.raises(ValueError):
        project_sector(v, 7)


def test_creation_on_vacuum():
    b = FockBasis(3, 5)
    out = apply_creation(np.array([1, 0, 0]), vacuum(b))
    np.testing.assert_array_equal(out.amplitudes, basis_vector(b, (1, 0, 0)).amplitudes)


def test_repeated_creation_normalized():
    b = FockBasis(2, 6)
    v = vacuum(b)
    for _ in range(6):
        v = apply_creation(np.array([1, 0]), v)
    np.testing.assert_allclose(v.amplitudes / np.sqrt(720.0), basis_vector(b, (6, 0)).amplitudes, atol=1e-14)
    np.testing.assert_allclose(product_state(np.array([1, 0]), 6, b).amplitudes,
                               basis_vector(b, (6, 0)).amplitudes, atol=1e-14)


def test_creation_adjoint(rng):
    b = FockBasis(3, 6)
    f = rng.normal(size=3) + 1j * rng.normal(size=3)
    for _ in range(10):
        v, w = random_vector(b, rng), random_vector(b, rng)
        assert abs(w.inner(apply_creation(f, v)) - apply_annihilation(f, w).inner(v)) <= 1e-12


def test_annihilation_kills_vacuum():
    b = FockBasis(2, 4)
    assert np.all(apply_annihilation(np.array([0.3, 1j]), vacuum(b)).amplitudes == 0)


def test_coherent_eigenvector():
    b = FockBasis(2, 20)
    f = np.array([0.6, 0.8j])
    psi = coherent_state(f, b)
    g = np.array([0.3, 1j])
    res = np.linalg.norm(annihilation_operator(b, g) @ psi.amplitudes - np.vdot(g, f) * psi.amplitudes)
    assert res <= 1e-8


@pytest.mark.xfail(strict=True, reason="top-sector weight of the truncated coherent state is ~1e-3 at "
                                       "|f|^2 = N_max/4 = 5; the 1e-8 tolerance needs |f|^2 well below")
def test_coherent_eigenvector_at_support_boundary():
    b = FockBasis(2, 20)
    f = np.sqrt(5) * np.array([0.6, 0.8j])
    psi = coherent_state(f, b)
    g = np.array([0.3, 1j])
    res = np.linalg.norm(annihilation_operator(b, g) @ psi.amplitudes - np.vdot(g, f) * psi.amplitudes)
    assert res <= 1e-8


def test_ccr_interior(rng):
    b = FockBasis(3, 12)
    assert ccr_residual(interior_vectors(b, 100, rng, margin=2)) <= 1e-12


def test_ccr_smeared(rng):
    b = FockBasis(2, 10)
    f, g = rng.normal(size=2) + 1j * rng.normal(size=2), rng.normal(size=2) + 1j * rng.normal(size=2)
    af, ag_star = annihilation_operator(b, f), creation_operator(b, g)
    for v in interior_vectors(b, 10, rng, margin=2):
        x = v.amplitudes
        comm = af @ (ag_star @ x) - ag_star @ (af @ x)
        assert np.linalg.norm(comm - np.vdot(f, g) * x) <= 1e-12


def test_moment_vacuum_and_basis_vector():
    b = FockBasis(2, 5)
    for j in (0, 1, 2, 3.5):
        assert moment(vacuum(b), j) == 1.0
    assert moment(basis_vector(b, (2, 1)), 1) == 4.0
    np.testing.assert_array_equal(number_operator(basis_vector(b, (2, 1))).amplitudes,
                                  3 * basis_vector(b, (2, 1)).amplitudes)
    with pytest.raises(ValueError):
        moment(FockVector(b, np.zeros(b.dim)), 1)


def coherent_number_stats(f, N_max):
    b = FockBasis(len(f), N_max)
    w = np.abs(coherent_state(f, b).amplitudes) ** 2
    w = w / w.sum()
    mean = np.sum(w * b.totals)
    return mean, np.sum(w * b.totals**2) - mean**2


def test_coherent_poisson_statistics():
    f = np.array([0.6, 0.8j])
    mean, var = coherent_number_stats(f, 20)
    assert abs(mean - 1) <= 1e-8
    assert abs(var - 1) <= 1e-6


def test_coherent_mean_larger_field():
    f = np.sqrt(3.0) * np.array([0.6, 0.8])
    mean, _ = coherent_number_stats(f, 40)
    assert abs(mean - 3.0) <= 1e-8


def test_second_quantization_identity_and_diag():
    b = FockBasis(3, 5)
    np.testing.assert_allclose(second_quantization(np.eye(3), b).toarray(), np.diag(b.totals), atol=1e-14)
    D = second_quantization(np.diag([1.0, 0, 0]), b).toarray()
    np.testing.assert_allclose(D, np.diag(b.occupations[:, 0]))


def test_second_quantization_rejects_non_hermitian():
    with pytest.raises(ValueError):
        second_quantization(np.array([[0, 1], [0, 0]]), FockBasis(2, 3))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_second_quantization_bound(seed):
    rng = np.random.default_rng(seed)
    b = FockBasis(3, 6)
    A = rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3))
    J = A + A.conj().T
    v = random_vector(b, rng)
    lhs = np.linalg.norm(second_quantization(J, b) @ v.amplitudes)
    assert lhs <= np.linalg.norm(J, 2) * np.linalg.norm(b.totals * v.amplitudes) + 1e-12


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_ladder_bounds(seed):
    rng = np.random.default_rng(seed)
    b = FockBasis(2, 8)
    f = rng.normal(size=2) + 1j * rng.normal(size=2)
    v = random_vector(b, rng).amplitudes
    nf = np.linalg.norm(f)
    assert np.linalg.norm(annihilation_operator(b, f) @ v) <= nf * np.linalg.norm(np.sqrt(b.totals) * v) + 1e-12
    assert np.linalg.norm(creation_operator(b, f) @ v) <= nf * np.linalg.norm(np.sqrt(b.totals + 1.0) * v) + 1e-12


def test_weyl_zero_is_identity():
    b = FockBasis(2, 6)
    np.testing.assert_allclose(weyl_operator(np.zeros(2), b), np.eye(b.dim), atol=1e-15)


def test_weyl_inverse(rng):
    b = FockBasis(2, 12)
    f = np.array([0.5, -0.7j])
    for _ in range(5):
        v = random_vector(b, rng)
        back = weyl_apply(-f, weyl_apply(f, v))
        assert np.linalg.norm(back.amplitudes - v.amplitudes) <= 1e-12


def test_weyl_unitary_and_shift():
    f = np.array([0.6, 0.8j])
    assert weyl_unitarity_residual(f, FockBasis(3 - 1, 20)) <= 1e-12
    r20 = weyl_shift_residual(f, FockBasis(2, 20))
    r30 = weyl_shift_residual(f, FockBasis(2, 30))
    assert r20 <= 1e-6
    assert r30 < r20


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_weyl_preserves_norm(seed):
    rng = np.random.default_rng(seed)
    b = FockBasis(2, 10)
    f = rng.normal(size=2) + 1j * rng.normal(size=2)
    f = f / np.linalg.norm(f) * rng.uniform(0, 1.5)
    v = random_vector(b, rng)
    assert weyl_apply(f, v).norm() == pytest.approx(1.0, abs=1e-12)


def test_weyl_vacuum_matches_coherent_series():
    b = FockBasis(2, 24)
    f = np.array([0.6, 0.8j])
    W = weyl_apply(f, vacuum(b)).amplitudes
    low = slice(0, int(b.offsets[9]))
    np.testing.assert_allclose(W[low], coherent_state(f, b).amplitudes[low], atol=1e-10)


def test_vacuum_projection_of_coherent():
    b = FockBasis(2, 12)
    f = np.array([0.3, 0.4])
    p0 = project_sector(coherent_state(f, b), 0).amplitudes
    assert p0[0] == pytest.approx(np.exp(-0.125))
    assert np.count_nonzero(p0) == 1


def test_d_N_values():
    assert d_N(1) == pytest.approx(np.exp(0.5), rel=1e-14)
    assert d_N(1) == pytest.approx(1.648721, abs=1e-6)
    with pytest.raises(ValueError):
        d_N(0)


def test_d_N_quarter_power_bounded():
    r = np.array([d_N(N) / N**0.25 for N in range(1, 61)])
    assert r.max() / r.min() < 1.2


def test_d_N_limit_against_log_factorial():
    mpmath.mp.dps = 40
    target = (2 * np.pi) ** 0.25
    for N in range(20, 61):
        exact = mpmath.sqrt(mpmath.factorial(N)) / (mpmath.mpf(N) ** (mpmath.mpf(N) / 2) * mpmath.e ** (-mpmath.mpf(N) / 2))
        assert d_N(N) == pytest.approx(float(exact), rel=1e-12)
        assert abs(d_N(N) / N**0.25 / target - 1) <= 0.01


def test_displaced_number_state_parity_bound():
    q, b = 8, FockBasis(1, 32)
    v = weyl_operator(np.array([-np.sqrt(q)]), b)[:, q]
    for k in range(0, int(0.5 * q ** (1 / 3)) + 1):
        assert abs(v[2 * k]) <= 2 / d_N(q)
        assert abs(v[2 * k + 1]) <= 2 * (k + 1) ** 1.5 / (d_N(q) * np.sqrt(q))
    # the truncated column agrees with the untruncated amplitudes away from the cutoff
    np.testing.assert_allclose(displaced_number_amplitudes(q, -np.sqrt(q), 32)[:8], v[:8], atol=1e-10)


@pytest.mark.parametrize("q", range(4, 13))
def test_displaced_product_weighted_norm_bounded(q):
    b = FockBasis(1, 4 * q)
    v = weyl_operator(np.array([-np.sqrt(q)]), b)[:, q]
    assert d_N(q) * np.linalg.norm(v / np.sqrt(b.totals + 1.0)) <= 10


def test_occupation_csv_and_json():
    b = FockBasis(2, 2)
    lines = occupation_csv(b).splitlines()
    assert lines[0] == "rank,n0,n1"
    assert lines[1:] == ["0,0,0", "1,1,0", "2,0,1", "3,2,0", "4,1,1", "5,0,2"]
    doc = json.loads(vector_to_json(basis_vector(b, (1, 1))))
    assert doc["amplitudes"][4] == [1.0, 0.0]
