"""Regularizer algebra and regularized-calculus tests."""

import numpy as np
import pytest

from nsscat import opcore
from nsscat.errors import PoleAtBasePoint, QuadratureNotConverged, SingularShift
from nsscat.models import (
    OperatorModel,
    PlantedLevel,
    Potential1D,
    ToyModelSpec,
    build_schrodinger_1d,
    build_toy_model,
)
from nsscat.regcalc import (
    IntervalCalc,
    full_band_calc,
    RegFactor,
    Regularizer,
    default_base_point,
    make_interval_calc,
    reg_eval_operator,
    reg_eval_scalar,
    regularized_evolution,
    regularized_spectral_projection,
    resolution_of_identity_residual,
)
from nsscat.spectral import assemble_projections


def plain_model(diag, band=None):
    n = len(diag)
    band = band or (0.0, float(max(diag)))
    return OperatorModel(H0=np.diag(diag).astype(complex), C=np.eye(n),
                         W=np.zeros((n, n)), ess_band=band)


# ----------------------------------------------------------------------
# scalar evaluation
# ----------------------------------------------------------------------

def test_scalar_zero_at_singularity():
    reg = Regularizer(factors=(RegFactor(1.0, 1, "out"),), z0=1j)
    assert reg_eval_scalar(reg, "all", 1.0) == 0.0


def test_scalar_empty_is_one():
    reg = Regularizer(factors=(), z0=2j, nu_inf=0)
    assert reg_eval_scalar(reg, "all", 3.7 + 0.4j) == 1.0


def test_scalar_order_two_against_direct_arithmetic():
    reg = Regularizer(factors=(RegFactor(2.0, 2, "out"),), z0=1 + 1j)
    got = reg_eval_scalar(reg, "all", 3.0)
    want = (3.0 - 2.0) ** 2 / (3.0 - (1 + 1j)) ** 2  # independent evaluation
    assert got == pytest.approx(want, rel=1e-14)


def test_scalar_sides_and_pole():
    reg = Regularizer(factors=(RegFactor(1.0, 1, "out"), RegFactor(3.0, 2, "in")),
                      z0=2 + 2j)
    z = 5.0 + 0.1j
    assert reg_eval_scalar(reg, "plus", z) == pytest.approx(
        (z - 1.0) / (z - (2 + 2j)), rel=1e-14)
    assert reg_eval_scalar(reg, "minus", z) == pytest.approx(
        ((z - 3.0) / (z - (2 + 2j))) ** 2, rel=1e-14)
    with pytest.raises(PoleAtBasePoint):
        reg_eval_scalar(reg, "all", 2 + 2j)


def test_scalar_h_selector_filters_by_interval():
    reg = Regularizer(factors=(RegFactor(1.0, 1, "out"), RegFactor(6.0, 1, "in")),
                      z0=2 + 5j)
    z = 4.0
    inside_only = reg_eval_scalar(reg, ("h", (0.0, 2.0)), z)
    assert inside_only == pytest.approx((z - 1.0) / (z - (2 + 5j)), rel=1e-14)


# ----------------------------------------------------------------------
# operator evaluation
# ----------------------------------------------------------------------

def test_operator_trivial_identity():
    m = plain_model([1.0, 4.0])
    reg = Regularizer.trivial(default_base_point(m))
    assert np.allclose(reg_eval_operator(reg, "all", m), np.eye(2), atol=1e-12)


def test_operator_diagonal_example():
    m = plain_model([1.0, 4.0])
    reg = Regularizer(factors=(RegFactor(1.0, 1, "out"),), z0=1j)
    got = reg_eval_operator(reg, "all", m)
    assert np.allclose(got, np.diag([0.0, 3.0 / (4.0 - 1j)]), atol=1e-12)


def test_operator_matches_scalar_calculus_oracle():
    rng = np.random.default_rng(8)
    mdl = build_toy_model(ToyModelSpec(
        n_band=6, band_max=10.0, discrete=(PlantedLevel(2.0 - 1.0j, coupling=0.1),)))
    reg = Regularizer(factors=(RegFactor(3.0, 1, "out"), RegFactor(6.5, 2, "in")),
                      z0=default_base_point(mdl))
    got = reg_eval_operator(reg, "all", mdl)
    # independent oracle: scalar calculus through the eigendecomposition
    ker = mdl.kernel("H")
    vals = reg_eval_scalar(reg, "all", ker.w)
    want = (ker.V * vals[None, :]) @ ker.Vinv
    assert np.linalg.norm(got - want, 2) <= 1e-8 * np.linalg.norm(want, 2)


def test_operator_multiplicativity():
    mdl = build_toy_model(ToyModelSpec(n_band=6, band_max=10.0))
    z0 = default_base_point(mdl)
    reg = Regularizer(factors=(RegFactor(2.0, 1, "out"), RegFactor(7.0, 1, "in")),
                      z0=z0, nu_inf=1)
    full = reg_eval_operator(reg, "all", mdl)
    plus = reg_eval_operator(reg, "plus", mdl)
    minus = reg_eval_operator(reg, "minus", mdl)
    rinf = opcore.solve_shifted(mdl.H, z0, np.eye(mdl.dim))
    prod = plus @ minus @ rinf
    assert np.linalg.norm(full - prod, 2) <= 1e-10 * np.linalg.norm(full, 2)


def test_operator_rejects_base_point_near_spectrum():
    m = plain_model([1.0, 4.0])
    reg = Regularizer(factors=(), z0=1.0 + 0.01j)
    with pytest.raises(SingularShift):
        reg_eval_operator(reg, "all", m)


def test_factorization_identity_random_draws():
    # r_j(H) - r_j(z) = [(H - z) R_H(z0) (lam - z0)/(z - z0)]
    #                   * sum_k [(H - lam) R_H(z0)]^k ((z - lam)/(z - z0))^{nu-1-k}
    rng = np.random.default_rng(123)
    for trial in range(12):
        n = 6
        H = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
        lam = float(rng.uniform(-1, 1))
        nu = int(rng.integers(1, 4))
        z0 = complex(rng.uniform(-1, 1), rng.uniform(1.5, 3.0))
        z = complex(rng.uniform(-2, 2), rng.uniform(-1.2, 1.2))
        if abs(z - z0) < 0.3:
            z += 1.5
        I = np.eye(n)
        R0 = opcore.solve_shifted(H, z0, I)
        rH = np.linalg.matrix_power((H - lam * I) @ R0, nu)
        rz = ((z - lam) / (z - z0)) ** nu
        lhs = rH - rz * I
        S = np.zeros((n, n), dtype=complex)
        base = (H - lam * I) @ R0
        for k in range(nu):
            S += np.linalg.matrix_power(base, k) * ((z - lam) / (z - z0)) ** (nu - 1 - k)
        rhs = ((H - z * I) @ R0 * ((lam - z0) / (z - z0))) @ S
        assert np.linalg.norm(lhs - rhs, 2) <= 1e-10 * max(1.0, np.linalg.norm(lhs, 2))


# ----------------------------------------------------------------------
# regularized spectral projection
# ----------------------------------------------------------------------

@pytest.fixture(scope="module")
def hermitian_toy():
    return build_toy_model(ToyModelSpec(n_band=8, band_max=10.0))


def test_projection_counts_enclosed_levels(hermitian_toy):
    m = hermitian_toy
    levels = m.band_levels()  # 0, 10/7, ..., 10
    # cover levels 2, 3, 4 (indices 2..4) with midpoint edges
    a = 0.5 * (levels[1] + levels[2])
    b = 0.5 * (levels[4] + levels[5])
    calc = make_interval_calc(m, (a, b))
    P = regularized_spectral_projection(m, calc)
    assert abs(np.trace(P) - 3.0) <= 1e-3
    assert np.linalg.norm(P @ P - P, 2) <= 1e-3


def test_projection_full_band_identity(hermitian_toy):
    m = hermitian_toy
    calc = full_band_calc(m)
    P = regularized_spectral_projection(m, calc)
    assert np.linalg.norm(P - np.eye(m.dim), 2) <= 1e-3


def test_projection_free_schrodinger_full_band():
    m = build_schrodinger_1d(8.0, 48, Potential1D.zero(), delta=2.0)
    calc = full_band_calc(m)
    P = regularized_spectral_projection(m, calc)
    assert np.linalg.norm(P - np.eye(m.dim), 2) <= 1e-3


def test_projection_idempotent_on_dissipative_subinterval():
    # interval resolution requires the dissipative level widths to stay
    # well below the distance from the interval edges to the nearest level;
    # a gentle well and mid-band placement satisfy that cleanly
    V = Potential1D.from_pieces([(-1.0, 1.0, -(0.5 + 0.05j))])
    m = build_schrodinger_1d(24.0, 160, V, delta=2.0)
    lv = m.band_levels()
    a = 0.5 * (lv[20] + lv[21])
    b = 0.5 * (lv[40] + lv[41])
    calc = make_interval_calc(m, (a, b))
    P = regularized_spectral_projection(m, calc)
    assert np.linalg.norm(P @ P - P, 2) <= 1e-3
    assert abs(np.trace(P) - 20.0) <= 1e-3


def test_projection_locality_disjoint_intervals(hermitian_toy):
    m = hermitian_toy
    lv = m.band_levels()
    c1 = make_interval_calc(m, (0.5 * (lv[0] + lv[1]), 0.5 * (lv[2] + lv[3])))
    c2 = make_interval_calc(m, (0.5 * (lv[4] + lv[5]), 0.5 * (lv[6] + lv[7])))
    P1 = regularized_spectral_projection(m, c1)
    P2 = regularized_spectral_projection(m, c2)
    assert np.linalg.norm(P1 @ P2, 2) <= 1e-3


# ----------------------------------------------------------------------
# regularized evolution
# ----------------------------------------------------------------------

def test_evolution_at_zero_equals_projection(hermitian_toy):
    m = hermitian_toy
    lv = m.band_levels()
    calc = make_interval_calc(m, (0.5 * (lv[1] + lv[2]), 0.5 * (lv[4] + lv[5])))
    P = regularized_spectral_projection(m, calc)
    E0 = regularized_evolution(m, calc, 0.0)
    assert np.linalg.norm(P - E0, 2) <= 1e-10


def test_evolution_free_full_band_matches_propagator(hermitian_toy):
    m = hermitian_toy
    calc = full_band_calc(m)
    t = 1.0
    Et = regularized_evolution(m, calc, t)
    want = m.kernel("H").propagator_matrix(-t)  # e^{+itH}
    assert np.linalg.norm(Et - want, 2) <= 1e-3


def test_evolution_uniformly_bounded_on_interval():
    V = Potential1D.from_pieces([(-1.0, 1.0, -(1.0 + 0.25j))])
    m = build_schrodinger_1d(12.0, 96, V, delta=2.0)
    lv = m.band_levels()
    calc = make_interval_calc(m, (0.5 * (lv[4] + lv[5]), 0.5 * (lv[12] + lv[13])))
    sup = 0.0
    for t in (1.0, 5.0, 25.0):
        Et = regularized_evolution(m, calc, t)
        sup = max(sup, np.linalg.norm(Et, 2))
    assert sup <= 2.0  # bounded constant, recorded once


# ----------------------------------------------------------------------
# resolution of identity
# ----------------------------------------------------------------------

def test_resolution_identity_free(hermitian_toy):
    m = hermitian_toy
    reg = Regularizer.trivial(default_base_point(m))
    res = resolution_of_identity_residual(m, reg, np.zeros((m.dim, m.dim)))
    assert res <= 1e-3


def test_resolution_identity_with_discrete_eigenvalue():
    mdl = build_toy_model(ToyModelSpec(
        n_band=8, band_max=10.0, discrete=(PlantedLevel(5.0 - 2.0j),)))
    data = assemble_projections(mdl)
    reg = Regularizer.trivial(default_base_point(mdl))
    res = resolution_of_identity_residual(mdl, reg, data.Pi_disc)
    assert res <= 1e-3
