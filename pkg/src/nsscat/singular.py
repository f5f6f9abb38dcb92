"""Spectral-singularity detection.

Two independent routes:

* boundary-value probes -- the weighted resolvent norm ||C R_H(lam +/- i
  eps) C W|| measured down a decreasing eps schedule; a log-log fit of the
  blow-up exponent classifies lam as regular (exponent ~ 0) or singular
  (exponent >= 0.75, order = rounded exponent);
* the Jost route for 1D compactly supported potentials -- the coefficient
  a(k) of exp(ikx) on the left of the support for the solution matching
  exp(ikx) on the right; real zeros of a(k) are real resonances, i.e.
  spectral singularities at energy k^2.

The eps schedule is floored at twice the local quasi-continuum level
spacing: boundary limits below the discretization scale are unphysical,
and the floor is recorded with every probe.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import opcore
from .errors import StepTooCoarse
from .models import OperatorModel, Potential1D
from .util import parallel_map

_EPS = float(np.finfo(np.float64).eps)

#: probe exponent at or below which a point counts as regular
REGULAR_EXPONENT = 0.25
#: probe exponent at or above which a point counts as singular
SINGULAR_EXPONENT = 0.75
#: acceptance window around the rounded order
ORDER_WINDOW = 0.3


# ----------------------------------------------------------------------
# Boundary resolvent probes
# ----------------------------------------------------------------------

@dataclass
class BoundaryResolventProbe:
    """One boundary-value measurement of ||C R_H(lam +/- i eps) C W||."""

    lam: float
    side: str  # "out" (+i eps) or "in" (-i eps)
    eps: np.ndarray
    norms: np.ndarray
    fitted_exponent: float
    fit_r2: float
    eps_floor: float

    def is_regular(self) -> bool:
        return self.fitted_exponent <= REGULAR_EXPONENT

    def is_singular(self) -> bool:
        return self.fitted_exponent >= SINGULAR_EXPONENT


@dataclass
class SingularityRecord:
    """A detected spectral singularity with its estimated order."""

    lam: float
    side: str
    nu: int
    fitted_exponent: float
    resolved: bool  # |fitted_exponent - nu| <= ORDER_WINDOW
    probe: BoundaryResolventProbe = field(repr=False, default=None)


@dataclass
class DetectionResult:
    records: list
    nu_inf: int
    inf_probes: list
    grid: np.ndarray
    probes: list  # all grid probes, both sides

    def by_side(self, side: str):
        return [r for r in self.records if r.side == side]


def default_schedule(model: OperatorModel, lam: float, n: int = 12,
                     floor: Optional[float] = None,
                     start: Optional[float] = None) -> np.ndarray:
    """Geometric eps schedule from ``start`` down to the model floor.

    The floor is twice the local level spacing of the H0 quasi-continuum
    at lam (limits below the discretization scale are unphysical); the
    start defaults to max(0.1, 10 * floor) so the fit window spans about a
    decade whenever the band is dense enough.
    """
    if floor is None:
        floor = 2.0 * model.level_spacing(lam)
    if start is None:
        start = max(1.0e-1, 10.0 * floor)
    if start <= floor:
        start = 10.0 * floor
    return np.geomspace(start, floor, n)


def weighted_resolvent_norm(model: OperatorModel, z: complex,
                            iters: int = 40) -> float:
    """||C R_H(z) C W|| by power iteration (never assembles the matrix)."""
    if np.linalg.norm(model.W) == 0.0:
        return 0.0
    kerH = model.kernel("H")
    kerS = model.kernel("Hstar")
    C, W = model.C, model.W
    Ch, Wh = C.conj().T, W.conj().T

    def mv(v):
        return C @ kerH.resolvent_apply(z, C @ (W @ v))

    def mvh(v):
        return Wh @ (Ch @ kerS.resolvent_apply(np.conj(z), Ch @ v))

    return opcore.opnorm2_matvec(mv, mvh, model.dim, iters=iters)


def _fit_exponent(eps: np.ndarray, norms: np.ndarray):
    """Least-squares slope of log(norm) against log(1/eps) over the last
    half of the schedule; returns (exponent, r2)."""
    m = len(eps) // 2
    x = -np.log(eps[m:])
    y = np.log(np.maximum(norms[m:], 1e-300))
    if np.ptp(x) == 0.0:
        return 0.0, 0.0
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid ** 2)) / ss_tot if ss_tot > 0 else 1.0
    return float(slope), r2


def probe_point(model: OperatorModel, lam: float, side: str = "out",
                schedule: Optional[Sequence[float]] = None) -> BoundaryResolventProbe:
    """Measure the blow-up exponent of the weighted resolvent at lam.

    A fitted exponent <= 0.25 indicates an outgoing/incoming regular
    spectral point; >= 0.75 a singularity of (roughly) that order.
    """
    if side not in ("out", "in"):
        raise ValueError("side must be 'out' or 'in'")
    if schedule is None:
        schedule = default_schedule(model, lam)
    eps = np.asarray(sorted(schedule, reverse=True), dtype=float)
    if np.any(eps <= 0):
        raise ValueError("eps schedule must be positive")
    sgn = +1.0 if side == "out" else -1.0
    if np.linalg.norm(model.W) == 0.0:
        norms = np.zeros_like(eps)
        return BoundaryResolventProbe(lam=float(lam), side=side, eps=eps,
                                      norms=norms, fitted_exponent=0.0,
                                      fit_r2=1.0, eps_floor=float(eps[-1]))
    norms = np.array([weighted_resolvent_norm(model, lam + 1j * sgn * e)
                      for e in eps])
    expo, r2 = _fit_exponent(eps, norms)
    return BoundaryResolventProbe(lam=float(lam), side=side, eps=eps,
                                  norms=norms, fitted_exponent=expo,
                                  fit_r2=r2, eps_floor=float(eps[-1]))


def _golden_max(f, lo: float, hi: float, iters: int = 18):
    """Golden-section maximization of a scalar function on [lo, hi]."""
    invphi = (np.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(iters):
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = f(d)
    return (c, fc) if fc >= fd else (d, fd)


def detect_singularities(model: OperatorModel, grid: Sequence[float],
                         schedule: Optional[Sequence[float]] = None,
                         sides=("out", "in")) -> DetectionResult:
    """Probe a lambda grid, cluster flagged points, refine each cluster by
    golden-section search on the fitted-exponent peak, and estimate orders.

    The far end of the band (0.9 * band_max) is probed as the infinity
    surrogate; its default order is 0. Records with
    |fitted_exponent - round(fitted_exponent)| > 0.3 keep a ``resolved =
    False`` flag instead of raising.
    """
    grid = np.asarray(sorted(grid), dtype=float)
    lo, hi = model.ess_band
    if np.any(grid < lo) or np.any(grid > hi):
        raise ValueError("probe grid must lie inside the essential band")
    step = float(np.median(np.diff(grid))) if len(grid) > 1 else 1.0

    def probe_at(args):
        lam, side = args
        return probe_point(model, lam, side, schedule)

    tasks = [(lam, side) for side in sides for lam in grid]
    all_probes = parallel_map(probe_at, tasks)
    by_side = {side: [p for p in all_probes if p.side == side] for side in sides}

    records = []
    for side in sides:
        probes = by_side[side]
        flagged = [p.lam for p in probes if p.is_singular()]
        # cluster contiguous flagged grid points
        clusters = []
        for lam in sorted(flagged):
            if clusters and lam - clusters[-1][-1] <= 1.5 * step:
                clusters[-1].append(lam)
            else:
                clusters.append([lam])
        for cl in clusters:
            a = max(lo, cl[0] - step)
            b = min(hi, cl[-1] + step)

            def expo(lam_):
                return probe_point(model, float(lam_), side, schedule).fitted_exponent

            lam_peak, peak = _golden_max(expo, a, b)
            nu = max(1, int(round(peak)))
            records.append(SingularityRecord(
                lam=float(lam_peak), side=side, nu=nu,
                fitted_exponent=float(peak),
                resolved=abs(peak - nu) <= ORDER_WINDOW,
                probe=probe_point(model, float(lam_peak), side, schedule),
            ))

    inf_probes = [probe_point(model, 0.9 * hi, side, schedule) for side in sides]
    nu_inf = 0
    for p in inf_probes:
        if p.is_singular():
            nu_inf = max(nu_inf, max(1, int(round(p.fitted_exponent))))

    records.sort(key=lambda r: (r.lam, r.side))
    return DetectionResult(records=records, nu_inf=nu_inf,
                           inf_probes=inf_probes, grid=grid, probes=all_probes)


# ----------------------------------------------------------------------
# Jost function for 1D compactly supported potentials
# ----------------------------------------------------------------------

def _rk4_transfer(potential: Potential1D, k: np.ndarray, steps_per_unit: float):
    """Integrate -u'' + V u = k^2 u from the right edge of the support to
    the left edge (vectorized over k); returns (u, u') at the left edge."""
    a, b = potential.support
    bps = potential.breakpoints()
    u = np.exp(1j * k * b)
    up = 1j * k * u
    piecewise = potential.func is None
    k2 = k ** 2
    # march right -> left, segment by segment, steps aligned to breakpoints
    for seg_hi, seg_lo in zip(bps[::-1][:-1], bps[::-1][1:]):
        seg_len = seg_hi - seg_lo
        n = max(16, int(np.ceil(seg_len * steps_per_unit)))
        h = -seg_len / n
        x = seg_hi
        if piecewise:
            v_mid = complex(potential.sample(0.5 * (seg_hi + seg_lo))[0])
            sample = lambda xv: v_mid
        else:
            sample = lambda xv: complex(potential.sample(xv)[0])
        for _ in range(n):
            # RK4 on y = (u, u'), u'' = (V - k^2) u
            def f(xv, uu, uup):
                return uup, (sample(xv) - k2) * uu

            k1u, k1p = f(x, u, up)
            k2u, k2p = f(x + h / 2, u + h / 2 * k1u, up + h / 2 * k1p)
            k3u, k3p = f(x + h / 2, u + h / 2 * k2u, up + h / 2 * k2p)
            k4u, k4p = f(x + h, u + h * k3u, up + h * k3p)
            u = u + h / 6 * (k1u + 2 * k2u + 2 * k3u + k4u)
            up = up + h / 6 * (k1p + 2 * k2p + 2 * k3p + k4p)
            x += h
    return u, up


def jost_coefficients(potential: Potential1D, k, min_steps: int = 2000,
                      check: bool = True):
    """Coefficients (a(k), b(k)) of exp(ikx), exp(-ikx) on the left of the
    support for the solution that equals exp(ikx) on the right.

    Fourth-order fixed-step integration with step <= (support length)/2000;
    a Richardson half-step comparison guards the step size (StepTooCoarse
    above 1e-8 relative). Vectorized over k.
    """
    karr = np.atleast_1d(np.asarray(k, dtype=np.complex128))
    if np.any(np.abs(karr) < 1e-12):
        raise ValueError("k = 0 must be handled separately")
    if potential.is_zero:
        a = np.ones_like(karr)
        b = np.zeros_like(karr)
        return (a[0], b[0]) if np.isscalar(k) or np.ndim(k) == 0 else (a, b)
    lo, hi = potential.support
    spu = max(min_steps / (hi - lo), 1.0)

    def coeffs(steps_per_unit):
        u, up = _rk4_transfer(potential, karr, steps_per_unit)
        e = np.exp(1j * karr * lo)
        a = (u + up / (1j * karr)) / (2.0 * e)
        b = (u - up / (1j * karr)) * e / 2.0
        return a, b

    a1, b1 = coeffs(spu)
    if check:
        a2, b2 = coeffs(2.0 * spu)
        # scale-relative: |a| itself vanishes at resonances
        scale = np.maximum(np.maximum(np.abs(a2), np.abs(b2)), 1.0)
        rel = np.max(np.abs(a1 - a2) / scale)
        if rel > 1e-8:
            raise StepTooCoarse(
                f"half-step Richardson check failed (relative change {rel:.2e})")
        a1, b1 = a2, b2
    if np.isscalar(k) or np.ndim(k) == 0:
        return a1[0], b1[0]
    return a1, b1


def jost_function(potential: Potential1D, k, min_steps: int = 2000,
                  check: bool = True):
    """a(k): inverse transmission coefficient; analytic in k, equal to 1
    for the free line, and zero exactly at resonances."""
    a, _ = jost_coefficients(potential, k, min_steps=min_steps, check=check)
    return a


def find_real_resonances(potential: Potential1D, k_max: float,
                         n_scan: int = 800, polish_tol: float = 1e-10,
                         im_tol: float = 1e-6):
    """Real zeros of a(k) on (0, k_max].

    Scans |a(k)| for local minima below 0.5 (real potentials satisfy
    |a| >= 1 on the real axis, so an empty list is the expected generic
    outcome), polishes candidates by secant iteration in the complex
    k-plane, and keeps roots that return to the real axis within
    ``im_tol``. Multiplicity is the first non-vanishing derivative
    (finite differences). Returns a list of (k, multiplicity, energy).
    """
    if k_max <= 0:
        raise ValueError("k_max must be positive")
    if potential.is_zero:
        return []
    ks = np.linspace(k_max / n_scan, k_max, n_scan)
    avals = np.abs(jost_function(potential, ks, check=False))
    roots = []
    for i in range(1, n_scan - 1):
        if not (avals[i] < avals[i - 1] and avals[i] <= avals[i + 1]):
            continue
        if avals[i] > 0.5:
            continue
        # secant polish from the bracketing pair
        k0, k1 = complex(ks[i - 1]), complex(ks[i + 1])
        f0 = jost_function(potential, k0, check=False)
        f1 = jost_function(potential, k1, check=False)
        for _ in range(60):
            if abs(f1 - f0) == 0.0:
                break
            k2 = k1 - f1 * (k1 - k0) / (f1 - f0)
            k0, f0 = k1, f1
            k1 = k2
            f1 = jost_function(potential, k1, check=False)
            if abs(f1) <= polish_tol:
                break
        if abs(f1) > polish_tol:
            continue
        if abs(k1.imag) > im_tol * max(1.0, abs(k1)) or not (0 < k1.real <= k_max):
            continue
        kr = float(k1.real)
        if any(abs(kr - r[0]) < 1e-8 * max(1.0, k_max) for r in roots):
            continue
        # multiplicity from finite-difference derivatives
        h = 1e-4 * max(1.0, kr)
        samples = jost_function(
            potential, np.array([kr - h, kr, kr + h], dtype=complex), check=False)
        d1 = (samples[2] - samples[0]) / (2 * h)
        d2 = (samples[2] - 2 * samples[1] + samples[0]) / h ** 2
        mult = 1 if abs(d1) > abs(d2) * h else 2
        roots.append((kr, mult, kr ** 2))
    return roots


def tune_parameter(make_potential, k_target: float, c0: complex,
                   tol: float = 1e-12, max_iter: int = 60) -> complex:
    """Newton-tune a complex potential parameter until a(k_target) = 0.

    ``make_potential(c)`` builds the candidate Potential1D; the Jost
    function is analytic in the parameter, so Newton with a central
    finite-difference derivative converges quadratically from a reasonable
    start.
    """
    k = float(k_target)
    c = complex(c0)

    def a_of(cv):
        return jost_function(make_potential(cv), k, check=False)

    fc = a_of(c)
    for _ in range(max_iter):
        if abs(fc) <= tol:
            return complex(c)
        dc = 1e-6 * max(1.0, abs(c))
        deriv = (a_of(c + dc) - a_of(c - dc)) / (2 * dc)
        if deriv == 0:
            break
        c = c - fc / deriv
        fc = a_of(c)
    if abs(fc) > tol:
        raise RuntimeError(
            f"resonance tuning did not converge (|a| = {abs(fc):.2e})")
    return complex(c)


def tune_real_resonance(k_target: float, width: float = 1.0, x0: float = 0.0,
                        branch: int = 1, tol: float = 1e-12,
                        max_iter: int = 60) -> complex:
    """Complex amplitude c such that V = c * 1_[x0, x0+width] has a real
    resonance at k_target (a(k_target) = 0).

    Newton iteration on c started from the large-|c| asymptotic branch
    ``kappa ~ branch*pi/width``. The returned amplitude generically has a
    positive imaginary part (a gain medium); purely dissipative wells
    satisfy |a| >= 1/|t| >= 1 on the real axis and admit no real resonance.
    """
    k = float(k_target)
    kap0 = branch * np.pi / width - 2j * k / (branch * np.pi)
    c0 = k ** 2 - kap0 ** 2
    return tune_parameter(
        lambda cv: Potential1D.from_pieces([(x0, x0 + width, cv)]),
        k_target, c0, tol=tol, max_iter=max_iter)


def tune_resonator(k_target: float, barrier: float = 6.0,
                   barrier_width: float = 0.8, cavity_halfwidth: float = 1.0,
                   tol: float = 1e-12) -> complex:
    """Cavity amplitude c such that the barrier/cavity/barrier resonator
    (real barriers, complex cavity) has a real resonance at k_target.

    The cavity mode is long lived behind the barriers, so only a small
    imaginary (gain) part is needed to pull the resonance onto the real
    axis; the rest of the quasi-continuum stays almost undisturbed. Used
    as the weak-gain singular fixture.
    """
    d = cavity_halfwidth

    def make(cv):
        return Potential1D.from_pieces([
            (-d - barrier_width, -d, complex(barrier)),
            (-d, d, cv),
            (d, d + barrier_width, complex(barrier)),
        ])

    return tune_parameter(make, k_target, 0.0 + 0.05j, tol=tol)


def resonator_potential(c: complex, barrier: float = 6.0,
                        barrier_width: float = 0.8,
                        cavity_halfwidth: float = 1.0) -> Potential1D:
    """The barrier/cavity/barrier potential used by :func:`tune_resonator`."""
    d = cavity_halfwidth
    return Potential1D.from_pieces([
        (-d - barrier_width, -d, complex(barrier)),
        (-d, d, c),
        (d, d + barrier_width, complex(barrier)),
    ])
