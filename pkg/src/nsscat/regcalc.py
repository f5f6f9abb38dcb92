"""Regularizing rational functions and the regularized functional calculus.

The scalar factors (z - lam_j)^nu_j / (z - z0)^nu_j vanish at each
spectral singularity to exactly its order and are the only nontrivial
ingredient of the regularized objects: operator evaluation on H,
regularized spectral projections over an interval I (two boundary lines
lam +/- i eps with Richardson extrapolation in eps), the induced
evolution, and the resolution-of-identity residual that certifies the
whole calculus on a model.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from . import opcore
from .errors import PoleAtBasePoint, QuadratureNotConverged, SingularShift
from .models import OperatorModel

_EPS = float(np.finfo(np.float64).eps)


# ----------------------------------------------------------------------
# Regularizer
# ----------------------------------------------------------------------

@dataclass(frozen=True)
class RegFactor:
    """One singularity factor (z - lam)^nu / (z - z0)^nu."""

    lam: float
    nu: int
    side: str  # "out" or "in"

    def __post_init__(self):
        if self.nu < 1:
            raise ValueError("singularity order must be >= 1")
        if self.side not in ("out", "in"):
            raise ValueError("side must be 'out' or 'in'")


@dataclass(frozen=True)
class Regularizer:
    """Singularity list with base point z0 and the infinity order.

    ``plus`` factors collect outgoing singularities, ``minus`` factors the
    incoming ones; a two-sided singularity is simply recorded twice. The
    full function is the product of every factor times (z - z0)^(-nu_inf).
    """

    factors: tuple = ()
    z0: complex = 0.5 + 1.0j
    nu_inf: int = 0

    def __post_init__(self):
        if self.z0.imag == 0.0:
            raise ValueError("base point z0 must be off the real axis")
        if self.nu_inf < 0:
            raise ValueError("nu_inf must be nonnegative")

    @classmethod
    def from_detection(cls, detection, z0: complex) -> "Regularizer":
        """Build from a singular.DetectionResult."""
        facs = tuple(RegFactor(lam=r.lam, nu=r.nu, side=r.side)
                     for r in detection.records)
        return cls(factors=facs, z0=complex(z0), nu_inf=detection.nu_inf)

    @classmethod
    def trivial(cls, z0: complex) -> "Regularizer":
        return cls(factors=(), z0=complex(z0), nu_inf=0)

    def selected(self, selector) -> tuple:
        """Factors picked by a selector: 'all', 'plus', 'minus', 'h' with an
        interval, or ('j', index)."""
        if selector == "all":
            return self.factors
        if selector == "plus":
            return tuple(f for f in self.factors if f.side == "out")
        if selector == "minus":
            return tuple(f for f in self.factors if f.side == "in")
        if isinstance(selector, tuple) and selector[0] == "j":
            return (self.factors[selector[1]],)
        if isinstance(selector, tuple) and selector[0] == "h":
            a, b = selector[1]
            return tuple(f for f in self.factors if a <= f.lam <= b)
        raise ValueError(f"unknown selector {selector!r}")

    def includes_inf(self, selector) -> bool:
        return selector == "all" and self.nu_inf > 0

    def conjugated(self) -> "Regularizer":
        """The companion regularizer for H*: same real singularities,
        conjugated base point."""
        return replace(self, z0=complex(np.conj(self.z0)))

    def validate_against(self, model: OperatorModel,
                         margin: float = 0.1) -> None:
        """z0 must keep a distance of ``margin`` times the band scale from
        the spectrum of H and from the band itself."""
        lo, hi = model.ess_band
        scale = max(hi - lo, 1.0)
        w = model.kernel("H").w
        d_spec = float(np.min(np.abs(w - self.z0)))
        d_band = abs(self.z0.imag) if lo <= self.z0.real <= hi else min(
            abs(self.z0 - lo), abs(self.z0 - hi))
        if min(d_spec, d_band) < margin * scale:
            raise SingularShift(
                f"base point z0={self.z0:.4g} too close to the spectrum/band "
                f"(distance {min(d_spec, d_band):.3e} < {margin * scale:.3e})")


def default_base_point(model: OperatorModel) -> complex:
    """Band-center + i band-length: far from the spectrum, fixed and
    reported with every regularizer."""
    lo, hi = model.ess_band
    return complex(0.5 * (lo + hi), (hi - lo))


def reg_eval_scalar(reg: Regularizer, selector, z) -> np.ndarray:
    """Scalar value of the selected regularizing factors at z (vectorized)."""
    z = np.asarray(z, dtype=np.complex128)
    if np.any(np.abs(z - reg.z0) < 1e-14 * max(1.0, abs(reg.z0))):
        raise PoleAtBasePoint(f"regularizer evaluated at its base point {reg.z0}")
    out = np.ones_like(z)
    for f in reg.selected(selector):
        out = out * ((z - f.lam) / (z - reg.z0)) ** f.nu
    if reg.includes_inf(selector):
        out = out * (z - reg.z0) ** (-reg.nu_inf)
    return out if out.shape else np.complex128(out)


def reg_eval_operator(reg: Regularizer, selector, model: OperatorModel,
                      which: str = "H") -> np.ndarray:
    """The selected rational function evaluated on H (or H*).

    Products of (H - lam)^nu (H - z0)^(-nu) applied factor by factor; all
    factors commute, so the result is ordering independent up to rounding.
    For which='Hstar' the conjugated regularizer is the natural companion;
    pass reg.conjugated() explicitly when that is intended.
    """
    reg.validate_against(model)
    ker = model.kernel(which)
    A = ker.A
    n = model.dim
    I = np.eye(n, dtype=np.complex128)
    out = I.copy()
    for f in reg.selected(selector):
        for _ in range(f.nu):
            out = ker.resolvent_apply(reg.z0, (A - f.lam * I) @ out)
    if reg.includes_inf(selector):
        for _ in range(reg.nu_inf):
            out = ker.resolvent_apply(reg.z0, out)
    return out


# ----------------------------------------------------------------------
# Interval calculus
# ----------------------------------------------------------------------

@dataclass(frozen=True)
class IntervalCalc:
    """A closed subinterval of the band plus quadrature parameters.

    ``eps`` is the boundary-line height; the default is edge-aware: small
    enough that Lorentzian leakage of the levels nearest the interval ends
    stays below the quadrature tolerance after Richardson extrapolation.
    """

    I: tuple
    eps: float
    quad_nodes: int = 8
    trivial_h: bool = False  # force h = 1 on S_I (diagnostic runs)

    def factors_inside(self, reg: Regularizer) -> tuple:
        if self.trivial_h:
            return ()
        a, b = self.I
        return tuple(f for f in reg.factors if a <= f.lam <= b)


def default_interval_eps(model: OperatorModel, I: tuple) -> float:
    """Edge-aware boundary height.

    A tenth of the distance from the interval ends to the nearest level
    (but no larger than ten level spacings), raised when necessary so the
    boundary lines stay above the dissipative widths |Im w| of the
    eigenvalues enclosed in the interval -- a line running below the poles
    would assign them no spectral weight at all.
    """
    a, b = I
    lv = model.band_levels()
    inner = lv[(lv > a) & (lv < b)]
    d_edge = np.inf
    for edge in (a, b):
        d = np.min(np.abs(lv - edge)) if len(lv) else np.inf
        d_edge = min(d_edge, d)
    spacing = np.median(np.diff(lv)) if len(lv) > 1 else (b - a)
    eps = min(10.0 * spacing, 0.1 * d_edge if np.isfinite(d_edge) else 10 * spacing)
    if len(inner):
        eps = max(eps, 1e-6 * max(1.0, b - a))
    w = model.kernel("H").w
    widths = np.abs(w.imag[(w.real >= a) & (w.real <= b)
                           & (np.abs(w.imag) <= 10.0 * spacing)])
    if len(widths):
        eps = max(eps, 4.0 * float(np.max(widths)))
    return float(eps)


def make_interval_calc(model: OperatorModel, I, eps: Optional[float] = None,
                       quad_nodes: int = 8, trivial_h: bool = False) -> IntervalCalc:
    lo, hi = model.ess_band
    a, b = float(I[0]), float(I[1])
    if not (lo <= a < b <= hi):
        raise ValueError(f"interval [{a}, {b}] not inside the band [{lo}, {hi}]")
    if eps is None:
        eps = default_interval_eps(model, (a, b))
    return IntervalCalc(I=(a, b), eps=float(eps), quad_nodes=quad_nodes,
                        trivial_h=trivial_h)


def full_band_calc(model: OperatorModel, eps: Optional[float] = None,
                   quad_nodes: int = 8, pad_frac: float = 0.05) -> IntervalCalc:
    """Interval calculus covering the whole band plus a small margin.

    Band-edge levels of the quasi-continuum carry Lorentzians of width eps;
    integrating over the bare band would count them with weight 1/2. The
    pad (5% of the band by default) encloses them fully, and no spectrum
    lives in the padding.
    """
    lo, hi = model.ess_band
    pad = pad_frac * (hi - lo)
    a, b = lo - pad, hi + pad
    if eps is None:
        lv = model.band_levels()
        spacing = float(np.median(np.diff(lv))) if len(lv) > 1 else (hi - lo)
        eps = min(10.0 * spacing, 0.1 * pad)
    return IntervalCalc(I=(a, b), eps=float(eps), quad_nodes=quad_nodes)


# -- quadrature core ---------------------------------------------------

def _panelize(a: float, b: float, anchors: Sequence[float], min_scale: float,
              osc_limit: Optional[float] = None):
    """Split [a, b] into panels, geometrically graded toward each anchor
    down to ``min_scale``; panels additionally capped at ``osc_limit``."""
    pts = {a, b}
    for lam in anchors:
        if lam < a - (b - a) or lam > b + (b - a):
            continue
        if a < lam < b:
            pts.add(lam)
        d = min_scale
        while d <= 2.0 * (b - a):
            for s in (-1.0, +1.0):
                p = lam + s * d
                if a < p < b:
                    pts.add(p)
            d *= 2.0
    edges = np.array(sorted(pts))
    if osc_limit is not None and osc_limit > 0:
        refined = [edges[0]]
        for e0, e1 in zip(edges[:-1], edges[1:]):
            k = max(1, int(np.ceil((e1 - e0) / osc_limit)))
            refined.extend(np.linspace(e0, e1, k + 1)[1:])
        edges = np.array(refined)
    return edges


def _gauss_nodes(edges: np.ndarray, n_per_panel: int):
    x, w = np.polynomial.legendre.leggauss(n_per_panel)
    nodes, weights = [], []
    for e0, e1 in zip(edges[:-1], edges[1:]):
        half = 0.5 * (e1 - e0)
        nodes.append(0.5 * (e0 + e1) + half * x)
        weights.append(half * w)
    return np.concatenate(nodes), np.concatenate(weights)


def _boundary_weights(model: OperatorModel, reg: Regularizer,
                      calc: IntervalCalc, eps: float, t: float,
                      n_per_panel: int, which: str):
    """Per-eigenvalue weights g_i of the quadrature
    (1/2 pi i) int_I e^{it lam} [h R(lam+i eps) - h R(lam-i eps)] d lam
    evaluated in the diagonalizing basis (g depends only on the eigenvalue).
    """
    ker = model.kernel(which)
    a, b = calc.I
    facs = calc.factors_inside(reg)
    anchors = [f.lam for f in facs]
    # resolve each near-real eigenvalue inside the interval
    wl = ker.w
    near = wl[(wl.real >= a - 3 * eps) & (wl.real <= b + 3 * eps)
              & (np.abs(wl.imag) <= 50 * eps)]
    anchors += list(near.real)
    osc = None
    if t != 0.0:
        osc = 2.0 * np.pi / (4.0 * abs(t))  # >= 4 nodes per oscillation
    edges = _panelize(a, b, anchors, min_scale=eps / 2.0, osc_limit=osc)
    lam, wq = _gauss_nodes(edges, n_per_panel)

    def hval(z):
        out = np.ones_like(z)
        for f in facs:
            out = out * ((z - f.lam) / (z - reg.z0)) ** f.nu
        return out

    phase = np.exp(1j * t * lam) if t != 0.0 else 1.0
    up = hval(lam + 1j * eps) * phase * np.exp(-t * eps if t != 0 else 0.0)
    dn = hval(lam - 1j * eps) * phase * np.exp(+t * eps if t != 0 else 0.0)
    # g_i = sum_q w_q/(2 pi i) [up_q/(w_i - lam_q - i eps) - dn_q/(w_i - lam_q + i eps)]
    g = np.zeros(len(ker.w), dtype=np.complex128)
    chunk = 4096
    for s in range(0, len(lam), chunk):
        sl = slice(s, s + chunk)
        denom_up = ker.w[:, None] - lam[None, sl] - 1j * eps
        denom_dn = ker.w[:, None] - lam[None, sl] + 1j * eps
        g += (wq[None, sl] * (up[None, sl] / denom_up
                              - dn[None, sl] / denom_dn)).sum(axis=1)
    return g / (2j * np.pi)


def _reg_boundary_matrix(model: OperatorModel, reg: Regularizer,
                         calc: IntervalCalc, t: float, which: str,
                         tol: float, max_doublings: int = 5) -> np.ndarray:
    """Richardson-in-eps, node-doubling certified evaluation of
    (h 1_I)(H)-type integrals (t = 0) or their e^{itH}-weighted variant."""
    ker = model.kernel(which)
    if not ker.diagonalizable:
        raise QuadratureNotConverged(
            "eigenvector matrix too ill conditioned for the boundary-value "
            f"quadrature (cond={ker.cond_V:.2e})")
    n_nodes = calc.quad_nodes
    prev = None
    for _ in range(max_doublings + 1):
        g1 = _boundary_weights(model, reg, calc, calc.eps, t, n_nodes, which)
        g2 = _boundary_weights(model, reg, calc, calc.eps / 2.0, t, n_nodes, which)
        g = 2.0 * g2 - g1  # first-order Richardson in eps
        if prev is not None:
            delta = float(np.max(np.abs(g - prev)))
            if delta <= tol:
                return ker.function_matrix(g)
            if n_nodes >= calc.quad_nodes * 2 ** max_doublings:
                raise QuadratureNotConverged(
                    f"node doubling stalled at {n_nodes} nodes/panel "
                    f"(last change {delta:.2e})",
                    last_delta=delta, last_value=ker.function_matrix(g))
        prev = g
        n_nodes *= 2
    raise QuadratureNotConverged("node doubling budget exhausted")


def regularized_spectral_projection(model: OperatorModel, calc: IntervalCalc,
                                    reg: Optional[Regularizer] = None,
                                    which: str = "H",
                                    tol: float = 1.0e-6) -> np.ndarray:
    """(h 1_I)(H): the regularized spectral projection on the interval.

    h is the product of the regularizing factors whose singularities lie in
    I (h = 1 when none do, giving the plain two-line spectral projection).
    Composite Gauss-Legendre on panels graded toward singularities and
    near-real eigenvalues, Richardson-extrapolated from (eps, eps/2), node
    count doubled until the per-eigenvalue weights stabilise to ``tol``.
    """
    if reg is None:
        reg = Regularizer.trivial(default_base_point(model))
    return _reg_boundary_matrix(model, reg, calc, 0.0, which, tol)


def regularized_evolution(model: OperatorModel, calc: IntervalCalc, t: float,
                          reg: Optional[Regularizer] = None,
                          which: str = "H", tol: float = 1.0e-6) -> np.ndarray:
    """e^{itH} (h 1_I)(H) by the same boundary-value quadrature with the
    integrand weighted by e^{it lam}; node counts scale with |t| |I| so that
    every oscillation period carries at least four nodes."""
    if reg is None:
        reg = Regularizer.trivial(default_base_point(model))
    return _reg_boundary_matrix(model, reg, calc, float(t), which, tol)


def resolution_of_identity_residual(model: OperatorModel, reg: Regularizer,
                                    Pi_disc: np.ndarray,
                                    calc: Optional[IntervalCalc] = None,
                                    tol: float = 1.0e-6) -> float:
    """|| r(H) - r(H) Pi_disc - (r 1_band)(H) ||: the numerical certificate
    of the resolution of identity for the regularized calculus.

    ``Pi_disc`` must sum the Riesz projections of the discrete (isolated
    feature) eigenvalues; the band integral picks up everything else.
    """
    if calc is None:
        calc = full_band_calc(model)
    rH = reg_eval_operator(reg, "all", model)
    band_part = _reg_boundary_matrix(model, reg, calc, 0.0, "H", tol)
    if reg.nu_inf > 0:
        ker = model.kernel("H")
        for _ in range(reg.nu_inf):
            band_part = ker.resolvent_apply(reg.z0, band_part)
    resid = rH - rH @ Pi_disc - band_part
    return float(np.linalg.norm(resid, 2))
