"""Kernel tests: eigendecomposition/Jordan recovery, shifted solves,
propagators, contour quadrature, singular values."""

import numpy as np
import pytest
import scipy.linalg as sla

from nsscat import opcore
from nsscat.errors import NoConvergence, OverflowRisk, SingularShift


def jordan_block(lam, size):
    J = lam * np.eye(size, dtype=np.complex128)
    J += np.diag(np.ones(size - 1), 1)
    return J


def well_conditioned_similarity(n, rng, spread=0.35):
    """Random similarity with modest condition number (orthogonal + bounded
    perturbation)."""
    Q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    T = Q + spread * rng.standard_normal((n, n)) / np.sqrt(n)
    assert np.linalg.cond(T) < 50
    return T


# ----------------------------------------------------------------------
# eig_decompose
# ----------------------------------------------------------------------

def test_eig_diagonal_matrix():
    data = opcore.eig_decompose(np.diag([1.0, 2.0, 3.0]), tol=1e-8)
    assert np.allclose(sorted(np.real(data.eigenvalues)), [1, 2, 3], atol=1e-12)
    assert data.alg_mult == [1, 1, 1]
    assert data.geo_mult == [1, 1, 1]


def test_eig_canonical_jordan_block():
    data = opcore.eig_decompose(jordan_block(5.0, 2), tol=1e-6)
    assert len(data.eigenvalues) == 1
    assert abs(data.eigenvalues[0] - 5.0) < 1e-7
    assert data.alg_mult == [2]
    assert data.geo_mult == [1]
    assert len(data.chains[0]) == 1
    assert len(data.chains[0][0]) == 2


def test_eig_planted_blocks_under_similarity():
    # J3(1+1j) + J2(-2) + diag(0, 4, 4) conjugated by a well-conditioned T
    rng = np.random.default_rng(7)
    B = sla.block_diag(jordan_block(1 + 1j, 3), jordan_block(-2.0, 2),
                       np.diag([0.0, 4.0, 4.0]))
    T = well_conditioned_similarity(8, rng)
    A = T @ B @ np.linalg.inv(T)
    data = opcore.eig_decompose(A, tol=1e-5)
    got = {
        (round(lam.real, 3), round(lam.imag, 3)): (m, g)
        for lam, m, g in zip(data.eigenvalues, data.alg_mult, data.geo_mult)
    }
    assert got[(1.0, 1.0)] == (3, 1)
    assert got[(-2.0, 0.0)] == (2, 1)
    assert got[(0.0, 0.0)] == (1, 1)
    assert got[(4.0, 0.0)] == (2, 2)


def test_chain_relation_residuals():
    rng = np.random.default_rng(3)
    B = sla.block_diag(jordan_block(2.0 - 0.5j, 2), np.diag([7.0, -1.0]))
    T = well_conditioned_similarity(4, rng)
    A = T @ B @ np.linalg.inv(T)
    data = opcore.eig_decompose(A, tol=1e-6)
    nrm = np.linalg.norm(A, 2)
    for lam, cl in zip(data.eigenvalues, data.chains):
        for ch in cl:
            assert np.linalg.norm((A - lam * np.eye(4)) @ ch[0]) <= 1e-6 * nrm
            for k in range(len(ch) - 1):
                res = (A - lam * np.eye(4)) @ ch[k + 1] - ch[k]
                assert np.linalg.norm(res) <= 1e-6 * nrm * max(
                    1.0, np.linalg.norm(ch[k + 1]))


def test_jordan_reconstruction_planted():
    rng = np.random.default_rng(11)
    B = sla.block_diag(jordan_block(1.5 + 0.5j, 2), np.diag([4.0, -3.0, 0.5]))
    T = well_conditioned_similarity(5, rng)
    A = T @ B @ np.linalg.inv(T)
    data = opcore.eig_decompose(A, tol=1e-6)
    A2 = data.reconstruct()
    assert np.linalg.norm(A2 - A, 2) <= 1e-8 * np.linalg.norm(A, 2)


def test_eig_rejects_bad_tol():
    with pytest.raises(ValueError):
        opcore.eig_decompose(np.eye(2), tol=1e-3)


# ----------------------------------------------------------------------
# solve_shifted
# ----------------------------------------------------------------------

def test_solve_shifted_zero_matrix():
    X = opcore.solve_shifted(np.zeros((3, 3)), -1.0, np.eye(3))
    assert np.allclose(X, np.eye(3), atol=1e-14)


def test_solve_shifted_diagonal():
    X = opcore.solve_shifted(np.diag([1.0, 2.0]), 1j, np.eye(2))
    assert np.allclose(np.diag(X), [1 / (1 - 1j), 1 / (2 - 1j)], atol=1e-14)


def test_solve_shifted_residual_random():
    rng = np.random.default_rng(0)
    A = rng.standard_normal((6, 6)) + 1j * rng.standard_normal((6, 6))
    B = rng.standard_normal((6, 6)) + 1j * rng.standard_normal((6, 6))
    z = 3 + 2j
    X = opcore.solve_shifted(A, z, B)
    res = np.linalg.norm((A - z * np.eye(6)) @ X - B) / np.linalg.norm(B)
    assert res <= 1e-10


def test_solve_shifted_detects_eigenvalue():
    with pytest.raises(SingularShift):
        opcore.solve_shifted(np.diag([1.0, 2.0]), 2.0, np.eye(2))


def test_resolvent_identity_random():
    # R(z1) - R(z2) = (z1 - z2) R(z1) R(z2)
    rng = np.random.default_rng(5)
    A = rng.standard_normal((7, 7)) + 1j * rng.standard_normal((7, 7))
    z1, z2 = 4 + 3j, -2 - 5j
    I = np.eye(7)
    R1 = opcore.solve_shifted(A, z1, I)
    R2 = opcore.solve_shifted(A, z2, I)
    lhs = R1 - R2
    rhs = (z1 - z2) * R1 @ R2
    assert np.linalg.norm(lhs - rhs) <= 1e-10 * np.linalg.norm(lhs)


# ----------------------------------------------------------------------
# propagate
# ----------------------------------------------------------------------

def test_propagate_identity_group():
    u = np.array([1.0, 2.0, -1.0 + 1j])
    assert np.allclose(opcore.propagate(np.zeros((3, 3)), 17.3, u), u)


def test_propagate_diagonal():
    got = opcore.propagate(np.diag([1.0, -1j]), np.pi, np.array([1.0, 1.0]))
    assert np.allclose(got, [-1.0, np.exp(-np.pi)], atol=1e-12)


def test_propagate_unitary_on_hermitian():
    rng = np.random.default_rng(9)
    M = rng.standard_normal((8, 8)) + 1j * rng.standard_normal((8, 8))
    A = (M + M.conj().T) / 2
    u = rng.standard_normal(8) + 1j * rng.standard_normal(8)
    v = opcore.propagate(A, 2.7, u)
    assert abs(np.linalg.norm(v) - np.linalg.norm(u)) <= 1e-9 * np.linalg.norm(u)


def test_propagate_group_law():
    rng = np.random.default_rng(13)
    A = rng.standard_normal((5, 5)) + 1j * 0.1 * rng.standard_normal((5, 5))
    u = rng.standard_normal(5) + 1j * rng.standard_normal(5)
    s, t = 3.7, -6.1
    v1 = opcore.propagate(A, s, opcore.propagate(A, t, u))
    v2 = opcore.propagate(A, s + t, u)
    assert np.linalg.norm(v1 - v2) <= 1e-8 * np.linalg.norm(v2)


def test_propagate_overflow_guard():
    A = np.diag([100.0j])  # exp(-i t A) = exp(100 t)
    with pytest.raises(OverflowRisk):
        opcore.propagate(A, 10.0, np.array([1.0]))


def test_spectral_kernel_matches_propagate_and_solve():
    rng = np.random.default_rng(21)
    A = rng.standard_normal((6, 6)) + 1j * 0.2 * rng.standard_normal((6, 6))
    ker = opcore.SpectralKernel(A)
    u = rng.standard_normal(6) + 1j * rng.standard_normal(6)
    assert np.allclose(ker.propagate(1.7, u), opcore.propagate(A, 1.7, u),
                       atol=1e-9, rtol=1e-9)
    z = 2.5 + 1.5j
    assert np.allclose(ker.resolvent_apply(z, u),
                       opcore.solve_shifted(A, z, u), atol=1e-9, rtol=1e-8)
    traj = ker.trajectory([0.0, 1.7], u)
    assert np.allclose(traj[0], u, atol=1e-10)
    assert np.allclose(traj[1], ker.propagate(1.7, u), atol=1e-10)


# ----------------------------------------------------------------------
# contour quadrature
# ----------------------------------------------------------------------

def test_contour_cauchy_integral():
    spec = opcore.ContourSpec(center=0.0, radius=1.0, nodes=16)
    got = opcore.contour_integral(lambda z: np.eye(2) / z, spec)
    assert np.allclose(got, np.eye(2), atol=1e-10)


def test_contour_no_pole_enclosed():
    spec = opcore.ContourSpec(center=5.0, radius=1.0, nodes=16)
    got = opcore.contour_integral(lambda z: np.eye(2) / z, spec)
    assert np.linalg.norm(got) <= 1e-10


def test_contour_eigenprojection_matches_spectral_oracle():
    A = np.diag([1.0, 9.0])
    spec = opcore.ContourSpec(center=1.0, radius=2.0, nodes=16)
    got = opcore.contour_integral(
        lambda z: -opcore.solve_shifted(A, z, np.eye(2)), spec)
    assert np.allclose(got, np.diag([1.0, 0.0]), atol=1e-10)


def test_contour_projection_matches_eig_projector():
    rng = np.random.default_rng(2)
    A = np.diag([1.0, 4.0, -2.0]) + 0.05 * (
        rng.standard_normal((3, 3)) + 1j * rng.standard_normal((3, 3)))
    data = opcore.eig_decompose(A, tol=1e-6)
    i = int(np.argmin([abs(l - 1.0) for l in data.eigenvalues]))
    lam = data.eigenvalues[i]
    spec = opcore.ContourSpec(center=lam, radius=1.2, nodes=16)
    P_contour = opcore.contour_integral(
        lambda z: -opcore.solve_shifted(A, z, np.eye(3)), spec)
    assert np.linalg.norm(P_contour - data.projector(i)) <= 1e-8


def test_contour_node_cap_raises():
    # integrand with a pole almost on the circle stalls the doubling
    spec = opcore.ContourSpec(center=0.0, radius=1.0, nodes=8)
    pole = 1.0 + 1e-9
    with pytest.raises(NoConvergence):
        opcore.contour_integral(lambda z: np.eye(1) / (z - pole) / (z + pole),
                                spec, tol=1e-14)


# ----------------------------------------------------------------------
# min_singular_value
# ----------------------------------------------------------------------

def test_min_singular_value_trivial():
    assert opcore.min_singular_value(np.eye(4)) == pytest.approx(1.0)
    assert opcore.min_singular_value(np.diag([3.0, 0.0])) == pytest.approx(0.0)


def test_min_singular_value_matches_hermitian_oracle():
    rng = np.random.default_rng(17)
    A = rng.standard_normal((6, 6)) + 1j * rng.standard_normal((6, 6))
    smin = opcore.min_singular_value(A)
    # independent oracle: sqrt of the smallest eigenvalue of A* A
    lam_min = np.min(np.linalg.eigvalsh(A.conj().T @ A))
    assert smin == pytest.approx(np.sqrt(max(lam_min, 0.0)), rel=1e-8)
