"""Exception taxonomy shared by all nsscat modules."""


class NsscatError(Exception):
    """Base class for all package errors."""


# ---- dense kernel (opcore) ----

class NonConvergence(NsscatError):
    """Eigenvalue iteration failed within its budget."""


class IllConditioned(NsscatError):
    """Eigenvalue clustering is ambiguous at the requested tolerance."""

    def __init__(self, msg, gap=None):
        super().__init__(msg)
        self.gap = gap


class SingularShift(NsscatError):
    """Shift z is numerically an eigenvalue (pivot below threshold)."""


class OverflowRisk(NsscatError):
    """Propagator norm estimate exceeds the overflow guard."""


class NoConvergence(NsscatError):
    """Contour quadrature did not stabilise before the node cap."""

    def __init__(self, msg, last_delta=None):
        super().__init__(msg)
        self.last_delta = last_delta


# ---- model builders ----

class SupportViolation(NsscatError):
    """Potential support leaks outside the open box (-L, L)."""


class GridTooCoarse(NsscatError):
    """1D grid has fewer points than the minimum resolution."""


class InfeasibleSpec(NsscatError):
    """Planted feature violates a structural hypothesis (e.g. degenerate
    conjugation bilinear form on a planted embedded eigenvalue)."""


# ---- spectral projections ----

class ContourTouchesSpectrum(NsscatError):
    """An eigenvalue lies too close to the integration circle."""


class DegenerateBilinearForm(NsscatError):
    """det of the conjugation Gram matrix is numerically zero."""

    def __init__(self, msg, det=None):
        super().__init__(msg)
        self.det = det


# ---- 1D scattering ----

class StepTooCoarse(NsscatError):
    """ODE step failed the half-step Richardson consistency check."""


# ---- regularized calculus ----

class PoleAtBasePoint(NsscatError):
    """Scalar regularizer evaluated at its base point z0."""


class QuadratureNotConverged(NsscatError):
    """Boundary-value quadrature failed to stabilise under node doubling."""

    def __init__(self, msg, last_delta=None, last_value=None):
        super().__init__(msg)
        self.last_delta = last_delta
        self.last_value = last_value


# ---- wave operators ----

class NoCauchyDecay(NsscatError):
    """Cook integral tail did not decay; carries the partial result."""

    def __init__(self, msg, result=None):
        super().__init__(msg)
        self.result = result


class TailNotConverged(NsscatError):
    """Smoothness integral tail over [T/2, T] contributes more than 5%."""

    def __init__(self, msg, report=None):
        super().__init__(msg)
        self.report = report


# ---- configuration / orchestration ----

class ConfigError(NsscatError):
    """Scenario configuration failed to parse or validate."""

    def __init__(self, msg, field=None):
        super().__init__(msg if field is None else f"{field}: {msg}")
        self.field = field
