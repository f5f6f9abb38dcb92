"""Operator model builders.

Two families of finite models H = H0 + C W C are provided:

* toy quasi-continuum models -- a diagonal band standing in for the
  essential spectrum, plus small complex-symmetric feature blocks that
  plant discrete eigenvalues, Jordan structure, or embedded eigenvalues
  with controlled conjugation properties;
* discretized 1D Schrodinger operators -(d/dx)^2 + V(x) on [-L, L] with
  Dirichlet ends, complex compactly supported V, and polynomial weights
  C = diag(<x>^-delta) so that the free weighted resolvent stays bounded
  down to the discretization scale.

The conjugation J acts as entrywise complex conjugation in the model
basis, optionally composed with a signed permutation; every builder
guarantees J H0 = H0 J, J C = C J and J W = W* J exactly (up to rounding),
so that J H = H* J holds by construction.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import opcore
from .errors import GridTooCoarse, InfeasibleSpec, SupportViolation

_EPS = float(np.finfo(np.float64).eps)


# ----------------------------------------------------------------------
# Potentials and grids
# ----------------------------------------------------------------------

@dataclass(frozen=True)
class Potential1D:
    """Compactly supported complex potential on the line.

    Either a piecewise-constant table (``pieces`` of half-open intervals
    ``[a, b)`` with complex values) or an arbitrary callable restricted to
    ``support``. Values vanish identically outside ``support``.
    """

    pieces: tuple = ()
    func: Optional[Callable] = None
    support: tuple = (0.0, 0.0)

    @classmethod
    def zero(cls) -> "Potential1D":
        return cls()

    @classmethod
    def from_pieces(cls, pieces: Sequence) -> "Potential1D":
        ps = tuple((float(a), float(b), complex(v)) for a, b, v in pieces)
        if not ps:
            return cls.zero()
        if any(b <= a for a, b, _ in ps):
            raise ValueError("potential pieces must have positive length")
        lo = min(a for a, _, _ in ps)
        hi = max(b for _, b, _ in ps)
        return cls(pieces=ps, support=(lo, hi))

    @classmethod
    def from_callable(cls, f: Callable, support) -> "Potential1D":
        lo, hi = float(support[0]), float(support[1])
        if hi <= lo:
            raise ValueError("support must be a nonempty interval")
        return cls(func=f, support=(lo, hi))

    @property
    def is_zero(self) -> bool:
        return self.func is None and not self.pieces

    def breakpoints(self) -> np.ndarray:
        if self.func is not None:
            return np.array(self.support)
        pts = sorted({p for a, b, _ in self.pieces for p in (a, b)})
        return np.array(pts)

    def sample(self, x) -> np.ndarray:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        v = np.zeros(x.shape, dtype=np.complex128)
        if self.func is not None:
            lo, hi = self.support
            inside = (x >= lo) & (x <= hi)
            if np.any(inside):
                v[inside] = np.asarray(self.func(x[inside]), dtype=np.complex128)
        else:
            for a, b, val in self.pieces:
                v[(x >= a) & (x < b)] += val
        if not np.all(np.isfinite(v)):
            raise ValueError("potential sample produced non-finite values")
        return v

    def sup_norm(self, samples: int = 4096) -> float:
        if self.is_zero:
            return 0.0
        lo, hi = self.support
        xs = np.linspace(lo, hi - (hi - lo) * 1e-12, samples)
        return float(np.max(np.abs(self.sample(xs))))


@dataclass(frozen=True)
class Grid1D:
    """Uniform grid of N points spanning [-L, L]."""

    L: float
    N: int

    @property
    def h(self) -> float:
        return 2.0 * self.L / (self.N - 1)

    @property
    def x(self) -> np.ndarray:
        return np.linspace(-self.L, self.L, self.N)


# ----------------------------------------------------------------------
# Planted features (toy models)
# ----------------------------------------------------------------------

@dataclass(frozen=True)
class PlantedLevel:
    """One feature to plant in a toy model.

    ``jordan`` is the Jordan chain length of the planted eigenvalue
    (1..3). ``declared_mult`` is the multiplicity at which conjugation
    Gram checks are performed; leaving it at None means the full planted
    chain length. Declaring less than the true length produces an
    isotropic (degenerate) kernel on purpose -- the builder refuses such
    plantings unless told otherwise.
    """

    value: complex
    jordan: int = 1
    coupling: float = 0.0
    declared_mult: Optional[int] = None

    def declared(self) -> int:
        return self.jordan if self.declared_mult is None else self.declared_mult


@dataclass(frozen=True)
class ToyModelSpec:
    n_band: int = 8
    band_max: float = 10.0
    c_band: float = 0.5
    c_feature: float = 1.0
    discrete: tuple = ()
    embedded: tuple = ()
    anchor: Optional[float] = None
    beta: float = 0.5
    seed: int = 42


@dataclass(frozen=True)
class PlantedRecord:
    """Build-time record of where a feature landed in the matrix."""

    value: complex
    kind: str  # "discrete" | "embedded"
    jordan: int
    declared_mult: int
    coupling: float
    block: tuple  # index range [start, stop)
    perturbation_estimate: float
    gram_det: complex


# ----------------------------------------------------------------------
# The operator model
# ----------------------------------------------------------------------

@dataclass
class OperatorModel:
    """The quadruple (H0, C, W, J) with derived H and H*.

    J is the antilinear map ``u -> S conj(u)`` for a real signed
    permutation S (identity by default). ``ess_band`` is the declared
    quasi-essential-spectrum interval of the H0 band.
    """

    H0: np.ndarray
    C: np.ndarray
    W: np.ndarray
    ess_band: tuple
    S: np.ndarray = None
    grid: Optional[Grid1D] = None
    potential: Optional[Potential1D] = None
    delta: Optional[float] = None
    planted: tuple = ()
    label: str = "model"
    _kernels: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.H0 = opcore.as_square_matrix(self.H0)
        self.C = opcore.as_square_matrix(self.C)
        self.W = opcore.as_square_matrix(self.W)
        n = self.dim
        if self.S is None:
            self.S = np.eye(n)
        self.S = np.asarray(self.S, dtype=float)
        self._check_structure()

    # -- structure ------------------------------------------------------

    @property
    def dim(self) -> int:
        return self.H0.shape[0]

    @property
    def H(self) -> np.ndarray:
        return self.H0 + self.C @ self.W @ self.C

    @property
    def Hstar(self) -> np.ndarray:
        return self.H0 + self.C @ self.W.conj().T @ self.C

    @property
    def V(self) -> np.ndarray:
        return self.C @ self.W @ self.C

    def _check_structure(self):
        n = self.dim
        nrm0 = np.linalg.norm(self.H0, 2)
        if np.linalg.norm(self.H0 - self.H0.conj().T, 2) > 1e-12 * max(nrm0, 1.0):
            raise ValueError("H0 is not Hermitian")
        lam_min = float(np.min(np.linalg.eigvalsh(self.H0)))
        if lam_min < -1e-10 * max(nrm0, 1.0):
            raise ValueError(f"H0 is not positive semidefinite (min eig {lam_min:.3e})")
        if opcore.min_singular_value(self.C) <= 0.0:
            raise ValueError("metric operator C is not injective")
        if np.linalg.norm(self.S @ self.S - np.eye(n)) > 1e-12:
            raise ValueError("signed permutation S is not involutory")
        res = self.j_residuals()
        worst = max(res.values())
        if worst > 1e-10:
            raise ValueError(f"conjugation relations violated (residual {worst:.3e})")

    # -- conjugation ------------------------------------------------------

    def apply_J(self, u) -> np.ndarray:
        """The antilinear conjugation J u = S conj(u)."""
        return self.S @ np.conj(np.asarray(u, dtype=np.complex128))

    def bilinear(self, u, v) -> complex:
        """The symmetric form <J u, v> = v^T S u."""
        u = np.asarray(u, dtype=np.complex128)
        v = np.asarray(v, dtype=np.complex128)
        return complex(v @ (self.S @ u))

    def j_residuals(self) -> dict:
        """Relative residuals of J H0 = H0 J, J C = C J, J W = W* J."""
        S = self.S

        def rel(X, Y, scale):
            return float(np.linalg.norm(X - Y, 2) / max(scale, 1e-30))

        return {
            "H0": rel(S @ self.H0.conj(), self.H0 @ S, np.linalg.norm(self.H0, 2) or 1.0),
            "C": rel(S @ self.C.conj(), self.C @ S, np.linalg.norm(self.C, 2)),
            "W": rel(S @ self.W.conj(), self.W.conj().T @ S,
                     max(np.linalg.norm(self.W, 2), 1e-15)),
        }

    # -- cached kernels ---------------------------------------------------

    def kernel(self, which: str = "H") -> opcore.SpectralKernel:
        """Cached SpectralKernel for H, H0 or H*."""
        if which not in self._kernels:
            mat = {"H": self.H, "H0": self.H0, "Hstar": self.Hstar}[which]
            self._kernels[which] = opcore.SpectralKernel(mat)
        return self._kernels[which]

    def band_levels(self) -> np.ndarray:
        """Sorted (real) eigenvalues of H0."""
        return np.sort(np.linalg.eigvalsh(self.H0))

    def level_spacing(self, lam: float) -> float:
        """Spacing of the H0 quasi-continuum near energy lam."""
        lv = self.band_levels()
        if len(lv) < 2:
            return float(self.ess_band[1] - self.ess_band[0])
        gaps = np.diff(lv)
        i = int(np.clip(np.searchsorted(lv, lam) - 1, 0, len(gaps) - 1))
        lo = max(0, i - 1)
        return float(np.max(gaps[lo:i + 2]))

    def refined(self) -> "OperatorModel":
        """Same 1D model on a grid with half the spacing (toy models refine
        the band density instead)."""
        if self.grid is None:
            raise ValueError("refined() requires a grid-based model")
        return build_schrodinger_1d(self.grid.L, 2 * self.grid.N - 1,
                                    self.potential or Potential1D.zero(),
                                    self.delta if self.delta is not None else 2.0)


def eigvec_c_weights(model: OperatorModel, which: str = "H") -> np.ndarray:
    """C-localization weight ||C v|| / ||v|| of every eigenvector of H.

    Band (quasi-continuum) states are delocalized and carry a small weight
    when C decays away from the interaction region; planted/bound feature
    states are localized and carry a large weight. Aligned with
    ``model.kernel(which).w``.
    """
    ker = model.kernel(which)
    V = ker.V
    CV = model.C @ V
    return np.linalg.norm(CV, axis=0) / np.linalg.norm(V, axis=0)


def feature_weight_threshold(model: OperatorModel, weights: np.ndarray) -> float:
    """Weight above which an eigenvector counts as a localized feature.

    The band baseline is the median weight (band states are the majority in
    every model built here); a feature must beat both 1.5x the baseline and
    0.6 of the largest C entry.
    """
    cmax = float(np.max(np.abs(np.diag(model.C))))
    return max(0.6 * cmax, 1.5 * float(np.median(weights)))


# ----------------------------------------------------------------------
# 1D Schrodinger builder
# ----------------------------------------------------------------------

def build_schrodinger_1d(L: float, N: int, potential: Potential1D,
                         delta: float = 2.0) -> OperatorModel:
    """Discretize -(d/dx)^2 + V on [-L, L] with Dirichlet ends.

    H0 is the standard second-order finite difference Laplacian scaled by
    1/h^2 (h = 2L/(N-1)); C = diag(<x>^-delta); W = diag(V(x) <x>^{2 delta})
    so that C W C = diag(V(x)) exactly. The declared quasi-essential band is
    [0, 4/h^2].

    Raises GridTooCoarse for N < 16 and SupportViolation when the potential
    support is not contained in the open box (-L, L).
    """
    if N < 16:
        raise GridTooCoarse(f"N={N} < 16")
    if delta <= 1.0:
        raise ValueError(f"weight exponent delta must exceed 1, got {delta}")
    potential = potential or Potential1D.zero()
    if not potential.is_zero:
        lo, hi = potential.support
        if lo <= -L or hi >= L:
            raise SupportViolation(
                f"potential support [{lo}, {hi}] must lie inside (-{L}, {L})")
    grid = Grid1D(L=float(L), N=int(N))
    h = grid.h
    x = grid.x
    main = np.full(N, 2.0 / h ** 2)
    off = np.full(N - 1, -1.0 / h ** 2)
    H0 = np.diag(main) + np.diag(off, 1) + np.diag(off, -1)
    bracket = np.sqrt(1.0 + x ** 2)
    C = np.diag(bracket ** (-delta)).astype(np.complex128)
    Vx = potential.sample(x)
    W = np.diag(Vx * bracket ** (2.0 * delta))
    return OperatorModel(
        H0=H0.astype(np.complex128), C=C, W=W,
        ess_band=(0.0, 4.0 / h ** 2),
        grid=grid, potential=potential, delta=float(delta),
        label="schrodinger1d",
    )


# ----------------------------------------------------------------------
# Toy model builder
# ----------------------------------------------------------------------

def _feature_block(value: complex, jordan: int, beta: float) -> np.ndarray:
    """Complex-symmetric block with a single eigenvalue ``value`` and one
    Jordan chain of the requested length."""
    mu = complex(value)
    if jordan == 1:
        return np.array([[mu]], dtype=np.complex128)
    if jordan == 2:
        return np.array([[mu + 1j * beta, beta],
                         [beta, mu - 1j * beta]], dtype=np.complex128)
    if jordan == 3:
        return np.array([[mu, beta, 0.0],
                         [beta, mu, 1j * beta],
                         [0.0, 1j * beta, mu]], dtype=np.complex128)
    raise ValueError(f"jordan length {jordan} not supported (1..3)")


def _block_kernel_gram(block: np.ndarray, value: complex, declared: int) -> complex:
    """det of the plain-conjugation Gram matrix on Ker((B - value)^declared),
    computed exactly on the small block."""
    n = block.shape[0]
    M = np.linalg.matrix_power(block - value * np.eye(n), declared)
    _, s, vh = np.linalg.svd(M)
    tol = max(s[0], 1.0) * 1e-10 if s.size else 1.0
    nullity = int(np.sum(s <= tol))
    if nullity == 0:
        return complex(1.0)
    Phi = vh[-nullity:].conj().T
    G = Phi.T @ Phi
    return complex(np.linalg.det(G))


def build_toy_model(spec: ToyModelSpec, allow_degenerate: bool = False) -> OperatorModel:
    """Assemble a toy model with the features planted in ``spec``.

    The band is a diagonal quasi-continuum of ``n_band`` equispaced levels
    in [0, band_max]. Each planted feature occupies its own block of
    feature coordinates; the block is complex symmetric so the default
    conjugation (entrywise) satisfies J W = W* J exactly. Optional coupling
    attaches the first block coordinate to every band level with a seeded
    unit pattern; the induced second-order shift of the planted eigenvalue
    is reported in the planting record.

    Raises InfeasibleSpec when a planted embedded eigenvalue has a
    degenerate conjugation Gram at its declared multiplicity (unless
    ``allow_degenerate`` is set, which is how degenerate test fixtures are
    produced on purpose).
    """
    rng = np.random.default_rng(spec.seed)
    levels = np.linspace(0.0, spec.band_max, spec.n_band)
    anchor = spec.band_max / 2.0 if spec.anchor is None else float(spec.anchor)
    if anchor < 0:
        raise ValueError("feature anchor energy must be nonnegative")

    plantings = [("discrete", p) for p in spec.discrete]
    plantings += [("embedded", p) for p in spec.embedded]
    n_feat = sum(p.jordan for _, p in plantings)
    n = spec.n_band + n_feat

    H0 = np.zeros((n, n), dtype=np.complex128)
    H0[:spec.n_band, :spec.n_band] = np.diag(levels)
    cdiag = np.concatenate([np.full(spec.n_band, spec.c_band),
                            np.full(n_feat, spec.c_feature)])
    C = np.diag(cdiag).astype(np.complex128)
    W = np.zeros((n, n), dtype=np.complex128)

    records = []
    pos = spec.n_band
    for kind, p in plantings:
        mu = complex(p.value)
        if kind == "embedded":
            if abs(mu.imag) > 0:
                raise InfeasibleSpec(f"embedded eigenvalue {mu} must be real")
            if not (0.0 < mu.real < spec.band_max):
                raise InfeasibleSpec(
                    f"embedded eigenvalue {mu.real} outside the open band "
                    f"(0, {spec.band_max})")
        blk = slice(pos, pos + p.jordan)
        H0[blk, blk] = anchor * np.eye(p.jordan)
        B = _feature_block(mu, p.jordan, spec.beta)
        W[blk, blk] = (B - anchor * np.eye(p.jordan)) / spec.c_feature ** 2

        gram = _block_kernel_gram(B, mu, p.declared())
        if kind == "embedded" and abs(gram) < 1e-10 and not allow_degenerate:
            raise InfeasibleSpec(
                f"embedded eigenvalue {mu.real}: conjugation bilinear form is "
                f"degenerate at declared multiplicity {p.declared()} "
                f"(|det G| = {abs(gram):.2e})")

        pert = 0.0
        if p.coupling != 0.0:
            xi = rng.standard_normal(spec.n_band)
            xi /= np.linalg.norm(xi)
            W[pos, :spec.n_band] = p.coupling * xi
            W[:spec.n_band, pos] = p.coupling * xi
            eff = spec.c_feature * spec.c_band * p.coupling * xi
            dist = np.maximum(np.abs(mu - levels),
                              0.5 * spec.band_max / max(spec.n_band - 1, 1))
            pert = float(np.sum(np.abs(eff) ** 2 / dist))
        records.append(PlantedRecord(
            value=mu, kind=kind, jordan=p.jordan, declared_mult=p.declared(),
            coupling=p.coupling, block=(pos, pos + p.jordan),
            perturbation_estimate=pert, gram_det=gram,
        ))
        pos += p.jordan

    return OperatorModel(
        H0=H0, C=C, W=W, ess_band=(0.0, spec.band_max),
        planted=tuple(records), label="toy",
    )


# ----------------------------------------------------------------------
# Hypothesis validation
# ----------------------------------------------------------------------

@dataclass
class HypothesisReport:
    """Numerical record of the structural hypotheses on one model."""

    lap_sup: float
    lap_grid_sups: list
    lap_trend: Optional[tuple]  # (coarse, fine) sups for grid models
    eig_counts: dict
    feature_count: int
    j_residuals: dict
    gram_records: list  # (value, declared_mult, det, degenerate_flag)
    flags: list

    def ok(self) -> bool:
        return not self.flags


def validate_hypotheses(model: OperatorModel, probes: int = 16,
                        refine: bool = True) -> HypothesisReport:
    """Sample the structural hypotheses on a model; report, never raise.

    (a) sup over a z-grid of ||C R0(z) C|| (the H0 limiting absorption
    surrogate; for discretized models the sup is h-dependent and the trend
    across two resolutions is recorded), (b) eigenvalue counts of H, (c)
    conjugation relation residuals, (d) conjugation Gram determinants of
    planted embedded eigenvalues.
    """
    flags = []
    lo, hi = model.ess_band
    ims = [1e-1, 1e-2, 1e-3, 1e-4]

    def lap_sups_of(mdl):
        k0 = mdl.kernel("H0")
        blo, bhi = mdl.ess_band
        pad = 0.1 * (bhi - blo)
        sups = []
        for re in np.linspace(blo - pad, bhi + pad, probes):
            for im in ims:
                for sgn in (+1.0, -1.0):
                    R = k0.resolvent_apply(re + 1j * sgn * im, mdl.C)
                    sups.append(opcore.opnorm2(mdl.C @ R))
        return sups

    sups = lap_sups_of(model)
    lap_sup = float(np.max(sups))

    lap_trend = None
    if refine and model.grid is not None:
        lap_trend = (lap_sup, float(np.max(lap_sups_of(model.refined()))))

    w = model.kernel("H").w
    scale = max(1.0, float(np.max(np.abs(w))))
    imtol = 1e-8 * scale
    counts = {
        "total": int(len(w)),
        "lower_half": int(np.sum(w.imag < -imtol)),
        "upper_half": int(np.sum(w.imag > imtol)),
        "real_in_band": int(np.sum((np.abs(w.imag) <= imtol)
                                   & (w.real >= lo - imtol)
                                   & (w.real <= hi + imtol))),
    }

    weights = eigvec_c_weights(model)
    feature_count = int(np.sum(weights >= feature_weight_threshold(model, weights)))

    jres = model.j_residuals()
    if max(jres.values()) > 1e-10:
        flags.append("conjugation residuals above 1e-10")

    gram_records = []
    for rec in model.planted:
        if rec.kind != "embedded":
            continue
        degenerate = abs(rec.gram_det) < 1e-10
        gram_records.append((rec.value, rec.declared_mult, rec.gram_det, degenerate))
        if degenerate:
            flags.append(
                f"degenerate bilinear form at embedded eigenvalue {rec.value.real:g}")

    return HypothesisReport(
        lap_sup=lap_sup,
        lap_grid_sups=[float(s) for s in sups],
        lap_trend=lap_trend,
        eig_counts=counts,
        feature_count=feature_count,
        j_residuals=jres,
        gram_records=gram_records,
        flags=flags,
    )
