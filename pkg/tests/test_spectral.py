"""Spectral classification and projection tests."""

import numpy as np
import pytest

from nsscat import opcore, spectral
from nsscat.errors import ContourTouchesSpectrum, DegenerateBilinearForm
from nsscat.models import (
    OperatorModel,
    PlantedLevel,
    Potential1D,
    ToyModelSpec,
    build_schrodinger_1d,
    build_toy_model,
)
from nsscat.spectral import (
    ads_subspace_check,
    assemble_projections,
    classify_spectrum,
    default_riesz_radius,
    embedded_projection,
    riesz_projection,
)


@pytest.fixture(scope="module")
def toy_discrete():
    return build_toy_model(ToyModelSpec(
        n_band=8, band_max=10.0, discrete=(PlantedLevel(2.0 - 0.3j, coupling=1e-3),)))


@pytest.fixture(scope="module")
def toy_two_discrete():
    return build_toy_model(ToyModelSpec(
        n_band=8, band_max=10.0,
        discrete=(PlantedLevel(2.0 - 0.3j), PlantedLevel(6.0 + 0.4j)),
    ))


@pytest.fixture(scope="module")
def toy_embedded():
    return build_toy_model(ToyModelSpec(
        n_band=8, band_max=10.0, embedded=(PlantedLevel(3.0),)))


@pytest.fixture(scope="module")
def toy_mixed():
    return build_toy_model(ToyModelSpec(
        n_band=8, band_max=10.0,
        discrete=(PlantedLevel(2.0 - 0.3j),),
        embedded=(PlantedLevel(3.0, jordan=2),),
    ))


@pytest.fixture(scope="module")
def free_toy():
    return build_toy_model(ToyModelSpec(n_band=8, band_max=10.0))


# ----------------------------------------------------------------------
# classification
# ----------------------------------------------------------------------

def test_classify_planted_discrete(toy_discrete):
    part = classify_spectrum(toy_discrete)
    assert len(part.discrete) == 1
    lam, m = part.discrete[0]
    assert abs(lam - (2.0 - 0.3j)) < 1e-4
    assert m == 1
    assert part.embedded == []
    assert part.band_count == 8


def test_classify_free_band_only(free_toy):
    part = classify_spectrum(free_toy)
    assert part.discrete == [] and part.embedded == [] and part.ambiguous == []
    assert part.band_count == 8


def test_classify_planted_embedded(toy_embedded):
    part = classify_spectrum(toy_embedded)
    assert len(part.embedded) == 1
    assert part.embedded[0][0] == pytest.approx(3.0, abs=1e-8)


def test_classify_edge_is_ambiguous():
    # feature planted exactly at the lower band edge
    m = build_toy_model(ToyModelSpec(n_band=8, band_max=10.0,
                                     discrete=(PlantedLevel(0.0),)))
    part = classify_spectrum(m)
    assert len(part.ambiguous) == 1
    assert part.discrete == [] and part.embedded == []


def test_classify_dissipative_well_band_excluded():
    V = Potential1D.from_pieces([(-1.0, 1.0, -(2.0 + 0.5j))])
    mdl = build_schrodinger_1d(12.0, 128, V, delta=2.0)
    part = classify_spectrum(mdl)
    # finitely many localized states; the shifted band stays out of Pi_p
    assert 1 <= len(part.discrete) <= 6
    assert part.band_count >= mdl.dim - 8
    for lam, _ in part.discrete:
        assert lam.imag < 0


# ----------------------------------------------------------------------
# Riesz projections
# ----------------------------------------------------------------------

def _plain_model(H0_diag):
    n = len(H0_diag)
    return OperatorModel(H0=np.diag(H0_diag).astype(complex), C=np.eye(n),
                         W=np.zeros((n, n)), ess_band=(0.0, float(max(H0_diag))))


def test_riesz_trivial_diagonal():
    m = _plain_model([1.0, 5.0])
    P = riesz_projection(m, 1.0, 1.0)
    assert np.allclose(P, np.diag([1.0, 0.0]), atol=1e-10)


def test_riesz_planted_trace(toy_discrete):
    lam = classify_spectrum(toy_discrete).discrete[0][0]
    P = riesz_projection(toy_discrete, lam, default_riesz_radius(toy_discrete, lam))
    assert abs(np.trace(P) - 1.0) < 1e-8


def test_riesz_jordan_block_rank():
    mdl = build_toy_model(ToyModelSpec(
        n_band=6, band_max=10.0, discrete=(PlantedLevel(2.0 - 1.0j, jordan=2),)))
    P = riesz_projection(mdl, 2.0 - 1.0j, default_riesz_radius(mdl, 2.0 - 1.0j))
    assert abs(np.trace(P) - 2.0) < 1e-8
    assert np.linalg.norm(P @ P - P, 2) < 1e-8


def test_riesz_contour_touch_raises():
    m = _plain_model([1.0, 5.0])
    with pytest.raises(ContourTouchesSpectrum):
        riesz_projection(m, 1.0, 4.0)  # circle passes through 5
    with pytest.raises(ContourTouchesSpectrum):
        riesz_projection(m, 1.0, 4.5)  # encloses the foreign eigenvalue 5


def test_riesz_matches_chain_projector(toy_two_discrete):
    # two independent constructions: contour quadrature vs chain basis
    mdl = toy_two_discrete
    data = opcore.eig_decompose(mdl.H, tol=1e-6)
    for target in (2.0 - 0.3j, 6.0 + 0.4j):
        i = int(np.argmin([abs(l - target) for l in data.eigenvalues]))
        lam = data.eigenvalues[i]
        P_c = riesz_projection(mdl, lam, default_riesz_radius(mdl, lam))
        P_chain = data.projector(i)
        assert np.linalg.norm(P_c - P_chain, 2) < 1e-6


def test_riesz_adjoint_relation(toy_two_discrete):
    # Pi_lambda(H)* = Pi_conj(lambda)(H*), both sides built independently
    mdl = toy_two_discrete
    lam = 2.0 - 0.3j
    r = default_riesz_radius(mdl, lam)
    P = riesz_projection(mdl, lam, r, which="H")
    Pstar = riesz_projection(mdl, np.conj(lam), r, which="Hstar")
    assert np.linalg.norm(P.conj().T - Pstar, 2) < 1e-8


# ----------------------------------------------------------------------
# embedded projections
# ----------------------------------------------------------------------

def test_embedded_simple_projection(toy_embedded):
    Pi, gc = embedded_projection(toy_embedded, 3.0, 1)
    assert np.linalg.norm(Pi @ Pi - Pi, 2) < 1e-12
    assert abs(np.trace(Pi) - 1.0) < 1e-10
    assert gc == pytest.approx(1.0, rel=1e-6)


def test_embedded_jordan2_commutes(toy_mixed):
    Pi, gc = embedded_projection(toy_mixed, 3.0, 2)
    H = toy_mixed.H
    assert np.linalg.norm(Pi @ H - H @ Pi, 2) <= 1e-8 * np.linalg.norm(H, 2)
    assert np.linalg.norm(Pi @ Pi - Pi, 2) < 1e-8
    assert abs(np.trace(Pi) - 2.0) < 1e-6
    assert np.isfinite(gc)


def test_embedded_degenerate_raises():
    bad = PlantedLevel(3.0, jordan=2, declared_mult=1)
    mdl = build_toy_model(ToyModelSpec(n_band=8, embedded=(bad,)),
                          allow_degenerate=True)
    with pytest.raises(DegenerateBilinearForm):
        embedded_projection(mdl, 3.0, 1)


# ----------------------------------------------------------------------
# assembly
# ----------------------------------------------------------------------

def test_assemble_free_model(free_toy):
    data = assemble_projections(free_toy)
    assert np.linalg.norm(data.Pi_p) == 0.0
    assert np.allclose(data.Pi_ac, np.eye(free_toy.dim))


def test_assemble_two_discrete(toy_two_discrete):
    data = assemble_projections(toy_two_discrete)
    assert abs(np.trace(data.Pi_p) - 2.0) < 1e-8
    assert data.residuals["pi_p_idempotency"] < 1e-8
    assert data.residuals["pi_cross"] < 1e-8


def test_assemble_mixed_j_orthogonal(toy_mixed):
    data = assemble_projections(toy_mixed)
    assert abs(np.trace(data.Pi_p) - 3.0) < 1e-6  # 1 discrete + Jordan-2 embedded
    assert data.residuals["pi_p_idempotency"] < 1e-8
    assert data.residuals["j_orthogonality"] < 1e-8
    for key, v in data.residuals["commutator"].items():
        assert v < 1e-8, key


def test_assemble_trace_counts_algebraic_multiplicity():
    mdl = build_toy_model(ToyModelSpec(
        n_band=8, band_max=10.0,
        discrete=(PlantedLevel(2.0 - 0.3j, jordan=2), PlantedLevel(7.0 + 1.0j)),
    ))
    data = assemble_projections(mdl)
    assert abs(np.trace(data.Pi_p) - 3.0) < 1e-7


# ----------------------------------------------------------------------
# asymptotically disappearing states
# ----------------------------------------------------------------------

def test_ads_decay_rate(toy_discrete):
    data = assemble_projections(toy_discrete)
    rep = ads_subspace_check(toy_discrete, data, T=40.0)
    assert len(rep.decaying) == 1
    lam, j, fitted, expected, ok = rep.decaying[0]
    assert expected == pytest.approx(0.3, abs=1e-3)
    assert ok
    assert rep.ac_floor is not None and rep.ac_floor > 1e-3


def test_ads_real_eigenvalue_no_decay(toy_embedded):
    data = assemble_projections(toy_embedded)
    rep = ads_subspace_check(toy_embedded, data, T=40.0)
    assert rep.decaying == []  # nothing with Im < 0
    assert rep.ac_floor > 0.9  # unitary-like band evolution


def test_ads_jordan_chain_rate():
    mdl = build_toy_model(ToyModelSpec(
        n_band=6, band_max=10.0, discrete=(PlantedLevel(1.0 - 0.4j, jordan=2),)))
    data = assemble_projections(mdl)
    rep = ads_subspace_check(mdl, data, T=50.0)
    assert len(rep.decaying) == 2
    for lam, j, fitted, expected, ok in rep.decaying:
        assert ok, (j, fitted, expected)
