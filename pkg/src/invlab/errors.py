"""Exception hierarchy. CLI exit codes hang off these classes."""

import numpy as np


class InvlabError(Exception):
    exit_code = 3


class ParameterError(InvlabError, ValueError):
    exit_code = 2


class DimensionError(InvlabError, ValueError):
    exit_code = 2


class GeometryError(ParameterError):
    pass


class FormatError(InvlabError):
    exit_code = 2


class NumericalError(InvlabError, RuntimeError):
    exit_code = 3


class KernelError(NumericalError):
    """The Dirichlet operator Delta + q is (numerically) singular."""


class PoleError(NumericalError):
    def __init__(self, k, value):
        self.k = np.asarray(k, dtype=float)
        self.value = value
        super().__init__(f"multiplier pole at lattice frequency k={[round(float(v), 12) for v in self.k]} (|symbol|={abs(value):.3e})")


class DivergenceError(NumericalError):
    pass


class SeparationError(NumericalError):
    pass


class DegenerateProbeError(NumericalError):
    pass


class DataIntegrityError(InvlabError):
    exit_code = 1


class NonvanishingError(NumericalError):
    """The CGO factor 1 + psi_v comes too close to zero."""
