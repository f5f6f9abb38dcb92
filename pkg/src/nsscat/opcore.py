"""Dense complex linear-algebra kernel.

Everything downstream (model builders, spectral projections, resolvent
probes, functional calculus, wave operators) is built on the routines in
this module: eigendecomposition with Jordan-chain recovery, shifted solves,
propagators, circle-contour quadrature and singular values.

All functions are pure; returned arrays are freshly allocated and safe to
share across threads.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .errors import (
    IllConditioned,
    NoConvergence,
    NonConvergence,
    OverflowRisk,
    SingularShift,
)

_EPS = float(np.finfo(np.float64).eps)

#: eigenvector-matrix condition number above which diagonalization-based
#: evaluation of matrix functions is abandoned for scaling-and-squaring
DIAG_COND_LIMIT = 1.0e6

#: log of the propagator-norm overflow guard (1e30)
_OVERFLOW_LOG = np.log(1.0e30)


def as_square_matrix(A) -> np.ndarray:
    """Validate and convert to a dense complex square matrix.

    Raises ValueError on non-square input or non-finite entries.
    """
    M = np.asarray(A, dtype=np.complex128)
    if M.ndim != 2 or M.shape[0] != M.shape[1] or M.shape[0] < 1:
        raise ValueError(f"expected a square matrix, got shape {M.shape}")
    if not np.all(np.isfinite(M.real)) or not np.all(np.isfinite(M.imag)):
        raise ValueError("matrix has non-finite entries")
    return M


# ----------------------------------------------------------------------
# Eigendecomposition with Jordan structure
# ----------------------------------------------------------------------

@dataclass
class JordanSpectralData:
    """Clustered eigenvalues of a matrix together with generalized
    eigenvector chains.

    Attributes
    ----------
    eigenvalues : list of complex
        Cluster means, ordered lexicographically by (Re, Im).
    alg_mult, geo_mult : list of int
        Algebraic and geometric multiplicities per cluster.
    chains : list of list of list of ndarray
        ``chains[i]`` is the list of Jordan chains of cluster ``i``; each
        chain is ``[u_1, ..., u_L]`` with ``(A - lam) u_1 = 0`` and
        ``(A - lam) u_{k+1} = u_k``.
    dim : int
        Dimension of the decomposed matrix.
    """

    eigenvalues: list
    alg_mult: list
    geo_mult: list
    chains: list
    dim: int
    raw_eigenvalues: np.ndarray = field(repr=False, default=None)

    def basis(self) -> np.ndarray:
        """All chain vectors as columns, clusters in order, chains in order,
        each chain from eigenvector up."""
        cols = [u for cl in self.chains for ch in cl for u in ch]
        return np.column_stack(cols)

    def cluster_slices(self):
        """Column ranges of :meth:`basis` per cluster."""
        out, start = [], 0
        for cl in self.chains:
            width = sum(len(ch) for ch in cl)
            out.append(slice(start, start + width))
            start += width
        return out

    def projector(self, i: int) -> np.ndarray:
        """Spectral projector onto cluster ``i`` built from the chain basis
        (independent of any contour integration)."""
        Phi = self.basis()
        sel = np.zeros(self.dim)
        sel[self.cluster_slices()[i]] = 1.0
        return (Phi * sel[None, :]) @ np.linalg.inv(Phi)

    def reconstruct(self) -> np.ndarray:
        """Reassemble the matrix as ``Phi J Phi^{-1}`` from chains and
        cluster eigenvalues."""
        Phi = self.basis()
        J = np.zeros((self.dim, self.dim), dtype=np.complex128)
        col = 0
        for lam, cl in zip(self.eigenvalues, self.chains):
            for ch in cl:
                L = len(ch)
                for j in range(L):
                    J[col + j, col + j] = lam
                    if j + 1 < L:
                        J[col + j, col + j + 1] = 1.0
                col += L
        return Phi @ J @ np.linalg.inv(Phi)


def _cluster_eigenvalues(w: np.ndarray, ctol: float):
    """Single-linkage clustering of eigenvalues at absolute threshold ctol.

    Returns a list of index arrays. Raises IllConditioned when two distinct
    clusters are separated by less than 3*ctol (the assignment would flip
    under a small change of the tolerance).
    """
    n = len(w)
    order = np.lexsort((w.imag, w.real))
    parent = list(range(n))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for i in range(n):
        for j in range(i + 1, n):
            if abs(w[order[i]] - w[order[j]]) <= ctol:
                ri, rj = find(i), find(j)
                if ri != rj:
                    parent[rj] = ri
    groups = {}
    for i in range(n):
        groups.setdefault(find(i), []).append(order[i])
    clusters = [np.array(v) for v in groups.values()]
    means = [np.mean(w[c]) for c in clusters]
    # inter-cluster separation check
    gap = np.inf
    for i in range(len(means)):
        for j in range(i + 1, len(means)):
            d = min(abs(w[a] - w[b]) for a in clusters[i] for b in clusters[j])
            gap = min(gap, d)
    if gap < 3.0 * ctol:
        raise IllConditioned(
            f"eigenvalue clusters separated by {gap:.3e} < 3*ctol={3 * ctol:.3e}",
            gap=gap,
        )
    idx = np.lexsort((np.array(means).imag, np.array(means).real))
    return [clusters[i] for i in idx]


def _nullspace(M: np.ndarray, rank_rtol: float):
    """Orthonormal basis of the numerical nullspace of M (SVD based)."""
    u, s, vh = np.linalg.svd(M)
    if s.size == 0:
        return np.zeros((M.shape[0], 0))
    tol = rank_rtol * max(s[0], _EPS)
    nullity = int(np.sum(s <= tol))
    if nullity == 0:
        return np.zeros((M.shape[0], 0), dtype=np.complex128)
    return vh[-nullity:].conj().T


def chains_for_cluster(A: np.ndarray, lam: complex, m: int,
                       rank_rtol: float = 1.0e-6):
    """Jordan chains of the (assumed) algebraic-multiplicity-m eigenvalue
    ``lam`` of A. Returns (geo_mult, chains) with the chain convention of
    :class:`JordanSpectralData`.

    Raises IllConditioned when the numerical nullity sequence of
    ``(A - lam)^k`` never reaches m.
    """
    n = A.shape[0]
    I = np.eye(n, dtype=np.complex128)
    M = A - lam * I
    bases = []
    P = I
    nullities = [0]
    for _ in range(m):
        P = P @ M
        B = _nullspace(P, rank_rtol)
        bases.append(B)
        nullities.append(B.shape[1])
        if nullities[-1] >= m or nullities[-1] == nullities[-2]:
            break
    s = [min(v, m) for v in nullities]
    if s[-1] != m:
        raise IllConditioned(
            f"nullity sequence {nullities[1:]} inconsistent with algebraic "
            f"multiplicity {m} at eigenvalue {lam:.6g}")
    p = len(s) - 1
    w_ge = [s[k] - s[k - 1] for k in range(1, p + 1)]
    w_ge.append(0)
    chains = []
    for k in range(p, 0, -1):
        need = w_ge[k - 1] - w_ge[k]
        if need <= 0:
            continue
        Nk = bases[k - 1]
        blockers = [bases[k - 2]] if k >= 2 else []
        blockers += [ch[k - 1][:, None] for ch in chains if len(ch) > k]
        blockers = [b for b in blockers if b.shape[1] > 0]
        if blockers:
            Q, _ = np.linalg.qr(np.column_stack(blockers))
            Cc = Nk - Q @ (Q.conj().T @ Nk)
        else:
            Cc = Nk
        uc, _, _ = np.linalg.svd(Cc, full_matrices=False)
        for t_i in range(need):
            top = uc[:, t_i]
            chain = [top]
            for _ in range(k - 1):
                chain.append(M @ chain[-1])
            chain.reverse()
            chains.append(chain)
    chains.sort(key=lambda ch: (-len(ch),))
    return s[1], chains


def eig_decompose(A, tol: float = 1.0e-8, rank_rtol: float = 1.0e-6) -> JordanSpectralData:
    """Eigenvalues clustered at relative tolerance ``tol`` with Jordan chains.

    Parameters
    ----------
    A : array_like
        Square complex matrix.
    tol : float
        Relative clustering tolerance, in (0, 1e-4]. Eigenvalues within
        ``tol * max(1, ||A||)`` of each other are merged into one cluster
        whose mean is reported (the mean of a defective cluster is second
        order accurate while the individual eigenvalues are not).
    rank_rtol : float
        Relative singular-value threshold for the nullspace ranks of
        ``(A - lam)^k`` used in chain recovery.

    Raises
    ------
    NonConvergence
        If the underlying QR iteration fails.
    IllConditioned
        If clustering is ambiguous at ``tol`` or the recovered nullity
        sequence is inconsistent with the cluster size.
    """
    A = as_square_matrix(A)
    if not (0.0 < tol <= 1.0e-4):
        raise ValueError(f"tol must be in (0, 1e-4], got {tol}")
    n = A.shape[0]
    scale = max(1.0, np.linalg.norm(A, 2))
    try:
        w = sla.eig(A, right=False)
    except sla.LinAlgError as exc:  # pragma: no cover - scipy rarely fails
        raise NonConvergence(f"QR iteration failed: {exc}") from exc
    ctol = tol * scale
    clusters = _cluster_eigenvalues(w, ctol)

    eigenvalues, alg_mult, geo_mult, chains = [], [], [], []
    for cl in clusters:
        lam = complex(np.mean(w[cl]))
        m = len(cl)
        eigenvalues.append(lam)
        alg_mult.append(m)
        g, cl_chains = chains_for_cluster(A, lam, m, rank_rtol)
        geo_mult.append(g)
        chains.append(cl_chains)

    return JordanSpectralData(
        eigenvalues=eigenvalues,
        alg_mult=alg_mult,
        geo_mult=geo_mult,
        chains=chains,
        dim=n,
        raw_eigenvalues=w,
    )


# ----------------------------------------------------------------------
# Shifted solves and propagators
# ----------------------------------------------------------------------

def solve_shifted(A, z: complex, B) -> np.ndarray:
    """Solve ``(A - z) X = B`` by LU with pivot-growth singularity detection.

    Raises SingularShift when the smallest pivot falls below
    ``dim * eps * max_pivot``, i.e. z is numerically an eigenvalue of A.
    """
    A = as_square_matrix(A)
    B = np.asarray(B, dtype=np.complex128)
    n = A.shape[0]
    with warnings.catch_warnings():
        # exact singularity is reported via SingularShift below
        warnings.simplefilter("ignore", sla.LinAlgWarning)
        lu, piv = sla.lu_factor(A - z * np.eye(n))
    d = np.abs(np.diag(lu))
    if d.min() <= n * _EPS * max(d.max(), _EPS):
        raise SingularShift(
            f"shift z={z:.6g} is numerically an eigenvalue "
            f"(pivot ratio {d.min() / max(d.max(), _EPS):.2e})"
        )
    return sla.lu_solve((lu, piv), B)


def _growth_exponent(t: float, w: np.ndarray) -> float:
    # |exp(-i t lam)| = exp(t * Im(lam))
    return float(np.max(t * w.imag)) if len(w) else 0.0


def propagate(A, t: float, u) -> np.ndarray:
    """Evaluate ``exp(-i t A) u``.

    Uses the eigendecomposition when the eigenvector matrix is well
    conditioned (below 1e6), otherwise scaling-and-squaring. Raises
    OverflowRisk when the propagator norm estimate exceeds 1e30.
    """
    A = as_square_matrix(A)
    u = np.asarray(u, dtype=np.complex128)
    if t == 0.0:
        return u.copy()
    w, V = sla.eig(A)
    if _growth_exponent(t, w) > _OVERFLOW_LOG:
        raise OverflowRisk(
            f"propagator norm estimate exp({_growth_exponent(t, w):.3g}) exceeds 1e30"
        )
    condV = np.linalg.cond(V)
    if condV <= DIAG_COND_LIMIT:
        return V @ (np.exp(-1j * t * w) * np.linalg.solve(V, u))
    return sla.expm(-1j * t * A) @ u


class SpectralKernel:
    """Cached eigendecomposition of a fixed matrix for fast repeated
    resolvent and propagator evaluations.

    When the eigenvector matrix condition exceeds ``DIAG_COND_LIMIT`` the
    kernel transparently falls back to direct LU solves / scaling-and-
    squaring so that accuracy never rests on an unreliable diagonalization.
    """

    def __init__(self, A):
        self.A = as_square_matrix(A)
        self.n = self.A.shape[0]
        w, V = sla.eig(self.A)
        self.w = w
        self.V = V
        self.cond_V = float(np.linalg.cond(V))
        self.diagonalizable = self.cond_V <= DIAG_COND_LIMIT
        self.Vinv = np.linalg.inv(V) if self.diagonalizable else None

    # -- resolvents -----------------------------------------------------

    def min_pole_distance(self, z: complex) -> float:
        return float(np.min(np.abs(self.w - z)))

    def resolvent_matrix(self, z: complex) -> np.ndarray:
        """(A - z)^{-1} as a dense matrix."""
        if self.diagonalizable:
            d = self.w - z
            if np.min(np.abs(d)) <= self.n * _EPS * max(1.0, np.max(np.abs(self.w))):
                raise SingularShift(f"z={z:.6g} is numerically an eigenvalue")
            return (self.V * (1.0 / d)[None, :]) @ self.Vinv
        return solve_shifted(self.A, z, np.eye(self.n, dtype=np.complex128))

    def resolvent_apply(self, z: complex, B) -> np.ndarray:
        """(A - z)^{-1} B for a vector or matrix B."""
        B = np.asarray(B, dtype=np.complex128)
        if self.diagonalizable:
            d = self.w - z
            if np.min(np.abs(d)) <= self.n * _EPS * max(1.0, np.max(np.abs(self.w))):
                raise SingularShift(f"z={z:.6g} is numerically an eigenvalue")
            c = self.Vinv @ B
            return self.V @ (c / (d[:, None] if B.ndim == 2 else d))
        return solve_shifted(self.A, z, B)

    def function_matrix(self, g: np.ndarray) -> np.ndarray:
        """``V diag(g) V^{-1}`` for per-eigenvalue weights g (diagonalizable
        path only)."""
        if not self.diagonalizable:
            raise IllConditioned(
                "eigenvector matrix too ill-conditioned for scalar calculus "
                f"(cond={self.cond_V:.2e})"
            )
        return (self.V * np.asarray(g)[None, :]) @ self.Vinv

    # -- propagators ----------------------------------------------------

    def _guard(self, t: float):
        g = _growth_exponent(t, self.w)
        if g > _OVERFLOW_LOG:
            raise OverflowRisk(f"propagator growth exponent {g:.3g} exceeds guard")

    def propagator_matrix(self, t: float) -> np.ndarray:
        """exp(-i t A) as a dense matrix."""
        self._guard(t)
        if self.diagonalizable:
            return (self.V * np.exp(-1j * t * self.w)[None, :]) @ self.Vinv
        return sla.expm(-1j * t * self.A)

    def propagate(self, t: float, u) -> np.ndarray:
        u = np.asarray(u, dtype=np.complex128)
        self._guard(t)
        if self.diagonalizable:
            c = self.Vinv @ u
            ph = np.exp(-1j * t * self.w)
            return self.V @ (c * (ph[:, None] if u.ndim == 2 else ph))
        return sla.expm(-1j * t * self.A) @ u

    def trajectory(self, ts, u) -> np.ndarray:
        """``exp(-i t A) u`` for every t in ts; returns array (len(ts), n)."""
        ts = np.asarray(ts, dtype=float)
        u = np.asarray(u, dtype=np.complex128)
        for t in (ts.min(), ts.max()):
            self._guard(float(t))
        if self.diagonalizable:
            c = self.Vinv @ u
            phases = np.exp(-1j * np.outer(ts, self.w))
            return (phases * c[None, :]) @ self.V.T
        return np.stack([sla.expm(-1j * t * self.A) @ u for t in ts])


# ----------------------------------------------------------------------
# Contour quadrature
# ----------------------------------------------------------------------

@dataclass(frozen=True)
class ContourSpec:
    """Counterclockwise circle for Riesz-type quadrature."""

    center: complex
    radius: float
    nodes: int = 16

    def __post_init__(self):
        if self.radius <= 0:
            raise ValueError("contour radius must be positive")
        if self.nodes < 8:
            raise ValueError("need at least 8 quadrature nodes")

    def points(self, n: int) -> np.ndarray:
        theta = 2.0 * np.pi * np.arange(n) / n
        return self.center + self.radius * np.exp(1j * theta)


NODE_CAP = 2 ** 14


def contour_integral(f, spec: ContourSpec, tol: float = 1.0e-10) -> np.ndarray:
    """``(1/2 pi i) \\oint f(z) dz`` over the circle by the trapezoid rule.

    Equispaced trapezoid on a circle is spectrally accurate for integrands
    analytic in an annulus around it; nodes are doubled (reusing previous
    evaluations) until two successive results differ by at most ``tol``
    relative, or the node cap 2^14 is hit (NoConvergence).
    """
    n = max(8, spec.nodes)
    theta = 2.0 * np.pi * np.arange(n) / n
    vals = [np.asarray(f(spec.center + spec.radius * np.exp(1j * th)), dtype=np.complex128)
            for th in theta]
    est = spec.radius / n * sum(v * np.exp(1j * th) for v, th in zip(vals, theta))
    while True:
        # interleave midpoints
        theta_new = theta + np.pi / n
        vals_new = [np.asarray(f(spec.center + spec.radius * np.exp(1j * th)),
                               dtype=np.complex128) for th in theta_new]
        all_theta = np.empty(2 * n)
        all_theta[0::2] = theta
        all_theta[1::2] = theta_new
        all_vals = [None] * (2 * n)
        all_vals[0::2] = vals
        all_vals[1::2] = vals_new
        n *= 2
        est_new = spec.radius / n * sum(
            v * np.exp(1j * th) for v, th in zip(all_vals, all_theta)
        )
        delta = np.linalg.norm(est_new - est) / max(1.0, np.linalg.norm(est_new))
        theta, vals, est = all_theta, all_vals, est_new
        if delta <= tol:
            return est
        if n >= NODE_CAP:
            raise NoConvergence(
                f"contour quadrature not stabilised at {n} nodes "
                f"(last relative change {delta:.3e})",
                last_delta=delta,
            )


def min_singular_value(A) -> float:
    """Smallest singular value of A."""
    A = as_square_matrix(A)
    return float(sla.svdvals(A)[-1])


def opnorm2(M: np.ndarray, iters: int = 30, seed: int = 0) -> float:
    """2-norm estimate by power iteration on M*M (deterministic start)."""
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(M.shape[1]) + 1j * rng.standard_normal(M.shape[1])
    v /= np.linalg.norm(v)
    for _ in range(iters):
        u = M @ v
        v = M.conj().T @ u
        nv = np.linalg.norm(v)
        if nv == 0.0:
            return 0.0
        v /= nv
    return float(np.linalg.norm(M @ v))


def opnorm2_matvec(matvec, rmatvec, dim: int, iters: int = 40,
                   rtol: float = 1.0e-6, seed: int = 0) -> float:
    """2-norm of an implicitly defined operator by power iteration on M*M.

    ``matvec``/``rmatvec`` apply M and its adjoint to a vector.
    """
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(dim) + 1j * rng.standard_normal(dim)
    v /= np.linalg.norm(v)
    last = 0.0
    for _ in range(iters):
        u = matvec(v)
        nu = np.linalg.norm(u)
        if nu == 0.0:
            return 0.0
        v = rmatvec(u)
        nv = np.linalg.norm(v)
        if nv == 0.0:
            return float(nu)
        v /= nv
        if abs(nu - last) <= rtol * max(nu, 1e-300):
            last = nu
            break
        last = nu
    return float(np.linalg.norm(matvec(v)))
