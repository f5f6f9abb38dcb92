"""nsscat: numerical scattering toolkit for non-self-adjoint operators.

Finite matrix models H = H0 + C W C (toy quasi-continua and discretized
1D Schrodinger operators with complex potentials) together with the
machinery to classify their spectra, detect spectral singularities from
resolvent boundary values, evaluate regularizing rational calculus, and
compute regularized wave operators with completeness diagnostics.
"""

__version__ = "0.1.0"

from . import errors  # noqa: F401
