"""Spectrum classification and spectral projections.

Splits the eigenvalues of H into quasi-continuum band levels, discrete
feature eigenvalues and embedded-eigenvalue candidates; builds Riesz
projections by contour quadrature, embedded projections from the
conjugation bilinear form, and the global splitting Pi_p / Pi_ac.

Band levels are recognised by the C-localization weight of their
eigenvectors (delocalized states carry little weight when C decays away
from the interaction region); at finite dimension this disambiguation is
heuristic and the weights plus the threshold used are always part of the
returned records.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import opcore
from .errors import ContourTouchesSpectrum, DegenerateBilinearForm
from .models import OperatorModel, eigvec_c_weights, feature_weight_threshold

_EPS = float(np.finfo(np.float64).eps)


# ----------------------------------------------------------------------
# Classification
# ----------------------------------------------------------------------

@dataclass
class SpectrumPartition:
    """Disjoint classification of the eigenvalue clusters of H."""

    discrete: list  # (lambda, alg_mult)
    embedded: list  # (lambda, alg_mult), lambda real inside the band
    ambiguous: list  # clusters within tol of a band edge, never dropped
    band_count: int
    weights: np.ndarray = field(repr=False)
    threshold: float = 0.0
    tol: float = 0.0


def _cluster_subset(values: np.ndarray, ctol: float):
    """Single-linkage clusters (index lists) of a small set of points."""
    n = len(values)
    used = np.zeros(n, dtype=bool)
    clusters = []
    for i in range(n):
        if used[i]:
            continue
        group = [i]
        used[i] = True
        stack = [i]
        while stack:
            a = stack.pop()
            for b in range(n):
                if not used[b] and abs(values[a] - values[b]) <= ctol:
                    used[b] = True
                    group.append(b)
                    stack.append(b)
        clusters.append(np.array(group))
    return clusters


def classify_spectrum(model: OperatorModel, tol: float = 1.0e-6) -> SpectrumPartition:
    """Partition the eigenvalues of H.

    Feature eigenvalues (localized eigenvectors, C-weight above the model
    threshold) are clustered at relative tolerance ``tol`` and labeled:
    embedded-candidate when real (|Im| <= tol*scale) with Re inside the open
    band, ambiguous when additionally within tol*scale of a band edge, and
    discrete otherwise. Delocalized states are band levels of H0 origin and
    are excluded from the point-spectrum surrogate.
    """
    ker = model.kernel("H")
    w = ker.w
    weights = eigvec_c_weights(model)
    threshold = feature_weight_threshold(model, weights)
    lo, hi = model.ess_band
    scale = max(1.0, float(np.max(np.abs(w))))
    atol = tol * scale

    feat_idx = np.where(weights >= threshold)[0]
    band_count = int(len(w) - len(feat_idx))

    discrete, embedded, ambiguous = [], [], []
    if len(feat_idx):
        for cl in _cluster_subset(w[feat_idx], atol):
            lam = complex(np.mean(w[feat_idx][cl]))
            m = int(len(cl))
            near_edge = min(abs(lam.real - lo), abs(lam.real - hi)) <= atol
            if abs(lam.imag) <= atol and near_edge:
                ambiguous.append((lam, m))
            elif abs(lam.imag) <= atol and lo < lam.real < hi:
                embedded.append((lam.real, m))
            else:
                discrete.append((lam, m))

    key = lambda t: (np.real(t[0]), np.imag(t[0]))
    return SpectrumPartition(
        discrete=sorted(discrete, key=key),
        embedded=sorted(embedded, key=key),
        ambiguous=sorted(ambiguous, key=key),
        band_count=band_count,
        weights=weights,
        threshold=threshold,
        tol=tol,
    )


# ----------------------------------------------------------------------
# Projections
# ----------------------------------------------------------------------

def default_riesz_radius(model: OperatorModel, lam: complex,
                         exclude_tol: float = 1.0e-8) -> float:
    """Half the distance from lam to the nearest spectrally distinct
    eigenvalue of H."""
    wk = model.kernel("H").w
    d = np.abs(wk - lam)
    scale = max(1.0, float(np.max(np.abs(wk))))
    d = d[d > exclude_tol * scale]
    if len(d) == 0:
        return 1.0
    return 0.5 * float(np.min(d))


def riesz_projection(model: OperatorModel, lam: complex, radius: float,
                     which: str = "H") -> np.ndarray:
    """Contour-quadrature Riesz projection onto the generalized eigenspace
    at the isolated eigenvalue ``lam``.

    Raises ContourTouchesSpectrum when any eigenvalue lies within
    radius/1000 of the circle, or when an eigenvalue not belonging to the
    lam cluster is enclosed (the isolation precondition fails).
    """
    ker = model.kernel(which)
    d = np.abs(ker.w - lam)
    on_circle = np.abs(d - radius) <= 1.0e-3 * radius
    if np.any(on_circle):
        culprit = ker.w[on_circle][0]
        raise ContourTouchesSpectrum(
            f"eigenvalue {culprit:.6g} within 1e-3*radius of the circle "
            f"|z - {lam:.6g}| = {radius:.3e}")
    scale = max(1.0, float(np.max(np.abs(ker.w))))
    enclosed_foreign = (d < radius) & (d > 0.25 * radius + 100 * _EPS * scale)
    if np.any(enclosed_foreign):
        raise ContourTouchesSpectrum(
            f"{int(np.sum(enclosed_foreign))} foreign eigenvalue(s) enclosed by "
            f"the circle around {lam:.6g}; shrink the radius")
    spec = opcore.ContourSpec(center=lam, radius=radius, nodes=16)
    return opcore.contour_integral(lambda z: -ker.resolvent_matrix(z), spec)


def _bilinear_orthonormalize(model: OperatorModel, Phi: np.ndarray,
                             breakdown_tol: float = 1.0e-8) -> np.ndarray:
    """Basis with <J phi_i, phi_j> = delta_ij by pivoted modified
    Gram-Schmidt in the bilinear (not sesquilinear) form, with one
    re-orthogonalization pass.

    Isotropic leading vectors (B(v,v) ~ 0 with B nondegenerate) are handled
    by combining candidate pairs; a genuine breakdown raises
    DegenerateBilinearForm.
    """
    B = model.bilinear
    cands = [Phi[:, k].copy() for k in range(Phi.shape[1])]
    accepted = []

    def orthogonalize(v):
        for _ in range(2):  # re-orthogonalization pass
            for q in accepted:
                v = v - B(q, v) * q
        return v

    while cands:
        cands = [orthogonalize(v) for v in cands]
        quality = [abs(B(v, v)) / max(np.linalg.norm(v) ** 2, _EPS) for v in cands]
        k = int(np.argmax(quality))
        if quality[k] < breakdown_tol:
            combined = False
            for i in range(len(cands)):
                for j in range(i + 1, len(cands)):
                    v = cands[i] + cands[j]
                    if abs(B(v, v)) / max(np.linalg.norm(v) ** 2, _EPS) >= breakdown_tol:
                        cands[i] = v
                        k, combined = i, True
                        break
                if combined:
                    break
            if not combined:
                raise DegenerateBilinearForm(
                    "bilinear Gram-Schmidt breakdown: all candidates isotropic")
        v = cands.pop(k)
        v = v / np.sqrt(complex(B(v, v)))  # principal branch
        accepted.append(v)
    return np.column_stack(accepted)


def embedded_projection(model: OperatorModel, lam: complex, m_lam: int,
                        rank_rtol: float = 1.0e-6):
    """Projection onto Ker((H - lam)^m) built from the conjugation bilinear
    form <J u, v>; returns (Pi, gram_condition).

    Raises DegenerateBilinearForm when |det G| < 1e-10 * scale on an
    orthonormal kernel basis (the structural nondegeneracy hypothesis
    fails at this multiplicity).
    """
    H = model.H
    n = model.dim
    M = np.linalg.matrix_power(H - lam * np.eye(n), m_lam)
    _, _, vh = np.linalg.svd(M)
    Phi = vh[-m_lam:].conj().T  # orthonormal, best m-dimensional kernel basis
    G = Phi.T @ (model.S @ Phi)
    det = complex(np.linalg.det(G))
    scale = max(1.0, float(np.linalg.norm(G, 2))) ** m_lam
    if abs(det) < 1.0e-10 * scale:
        raise DegenerateBilinearForm(
            f"|det G| = {abs(det):.3e} at embedded eigenvalue {lam:.6g} "
            f"(multiplicity {m_lam})", det=det)
    gram_condition = float(np.linalg.cond(G))
    Phi_t = _bilinear_orthonormalize(model, Phi)
    Pi = Phi_t @ (Phi_t.T @ model.S)
    return Pi, gram_condition


# ----------------------------------------------------------------------
# Assembly
# ----------------------------------------------------------------------

@dataclass
class SpectralData:
    """Classified point spectrum with all projections."""

    discrete: list  # (lambda, m, Pi)
    embedded: list  # (lambda, m, Pi, gram_condition)
    ambiguous: list  # (lambda, m) kept unprojected
    Pi_disc: np.ndarray
    Pi_p: np.ndarray
    Pi_ac: np.ndarray
    band: tuple
    partition: SpectrumPartition
    residuals: dict

    def point_eigenvalues(self):
        return [lam for lam, _, _ in self.discrete] + \
               [lam for lam, _, _, _ in self.embedded]


def assemble_projections(model: OperatorModel, tol: float = 1.0e-6) -> SpectralData:
    """Classify the spectrum and build every projection of the splitting
    Hi = Ran(Pi_p) (+) Ran(Pi_ac), with Pi_ac := I - Pi_p.

    Residuals reported: per-projection idempotency and commutator norms,
    trace-vs-multiplicity errors, Pi_p Pi_ac cross terms and the
    J-orthogonality of the splitting.
    """
    part = classify_spectrum(model, tol=tol)
    H = model.H
    n = model.dim
    nrmH = max(1.0, float(np.linalg.norm(H, 2)))

    residuals = {"idempotency": {}, "commutator": {}, "trace": {}}
    discrete, embedded = [], []
    Pi_disc = np.zeros((n, n), dtype=np.complex128)
    for lam, m in part.discrete:
        r = default_riesz_radius(model, lam)
        Pi = riesz_projection(model, lam, r)
        discrete.append((lam, m, Pi))
        Pi_disc = Pi_disc + Pi
        key = f"disc {lam:.6g}"
        residuals["idempotency"][key] = float(np.linalg.norm(Pi @ Pi - Pi, 2))
        residuals["commutator"][key] = float(np.linalg.norm(Pi @ H - H @ Pi, 2) / nrmH)
        residuals["trace"][key] = float(abs(np.trace(Pi) - m))

    for lam, m in part.embedded:
        Pi, gc = embedded_projection(model, lam, m)
        embedded.append((lam, m, Pi, gc))
        key = f"emb {lam:.6g}"
        residuals["idempotency"][key] = float(np.linalg.norm(Pi @ Pi - Pi, 2))
        residuals["commutator"][key] = float(np.linalg.norm(Pi @ H - H @ Pi, 2) / nrmH)
        residuals["trace"][key] = float(abs(np.trace(Pi) - m))

    Pi_p = Pi_disc + sum((Pi for _, _, Pi, _ in embedded),
                         np.zeros((n, n), dtype=np.complex128))
    Pi_ac = np.eye(n, dtype=np.complex128) - Pi_p

    residuals["pi_p_idempotency"] = float(np.linalg.norm(Pi_p @ Pi_p - Pi_p, 2))
    residuals["pi_cross"] = float(np.linalg.norm(Pi_p @ Pi_ac, 2))
    # J-orthogonality of the splitting: sup |<J Pi_p u, Pi_ac v>|
    residuals["j_orthogonality"] = float(
        np.linalg.norm(Pi_p.T @ model.S @ Pi_ac, 2))

    return SpectralData(
        discrete=discrete, embedded=embedded, ambiguous=list(part.ambiguous),
        Pi_disc=Pi_disc, Pi_p=Pi_p, Pi_ac=Pi_ac,
        band=model.ess_band, partition=part, residuals=residuals,
    )


# ----------------------------------------------------------------------
# Asymptotically disappearing states
# ----------------------------------------------------------------------

@dataclass
class ADSReport:
    """Decay-rate fits of generalized eigenvectors with Im(lambda) < 0 and
    the no-decay certificate for states in Ran(Pi_ac)."""

    decaying: list  # (lambda, chain_index, fitted_rate, expected_rate, ok)
    ac_floor: Optional[float]  # min_t ||exp(-itH) u|| / ||u|| over ac probes
    T: float


def ads_subspace_check(model: OperatorModel, data: SpectralData, T: float,
                       n_ac_probes: int = 4, seed: int = 42) -> ADSReport:
    """Fit exponential decay of ||exp(-itH) u|| for generalized eigenvectors
    with Im(lambda) < 0 over [0, T] (tail half, log scale, known polynomial
    prefactor from the chain position removed) and record the norm floor of
    ac-range probes. Report only, never raises.
    """
    ker = model.kernel("H")
    ts = np.linspace(max(0.05 * T, 1e-3), T, 48)
    tail = ts >= T / 2
    decaying = []
    for lam, m, _Pi in data.discrete:
        if lam.imag >= 0:
            continue
        _, chains = opcore.chains_for_cluster(model.H, lam, m)
        for ch in chains:
            for j, u in enumerate(ch):
                u = u / np.linalg.norm(u)
                ns = np.linalg.norm(ker.trajectory(ts, u), axis=1)
                y = np.log(np.maximum(ns, 1e-300)) - j * np.log(ts)
                slope = np.polyfit(ts[tail], y[tail], 1)[0]
                fitted = -float(slope)
                expected = -lam.imag
                ok = abs(fitted - expected) <= 0.1 * expected
                decaying.append((lam, j, fitted, expected, ok))

    ac_floor = None
    rank_ac = int(round(np.trace(data.Pi_ac).real))
    if rank_ac > 0:
        rng = np.random.default_rng(seed)
        floors = []
        for _ in range(n_ac_probes):
            g = rng.standard_normal(model.dim) + 1j * rng.standard_normal(model.dim)
            u = data.Pi_ac @ g
            nu = np.linalg.norm(u)
            if nu < 1e-12:
                continue
            u /= nu
            ns = np.linalg.norm(ker.trajectory(ts, u), axis=1)
            floors.append(float(np.min(ns)))
        ac_floor = min(floors) if floors else None

    return ADSReport(decaying=decaying, ac_floor=ac_floor, T=float(T))
