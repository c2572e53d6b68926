"""Exception hierarchy shared by every module of the package."""


class HSMMError(Exception):
    """Base class for all package errors."""


class DomainError(HSMMError, ValueError):
    """A parameter or argument lies outside its mathematical domain."""


class ConstructionError(HSMMError, ValueError):
    """Inconsistent dimensions when assembling a model object."""


class NoStationaryDistributionError(HSMMError):
    """The transition matrix has no unique stationary distribution."""


class LikelihoodError(HSMMError):
    """A non-finite emission density was met during a forward pass."""

    def __init__(self, message, t=None, state=None):
        super().__init__(message)
        self.t = t
        self.state = state


class SizeGuardError(HSMMError):
    """A brute-force enumeration would exceed its size budget."""


class OptimizationError(HSMMError):
    """Every restart of the likelihood maximizer failed."""


class SamplingError(HSMMError):
    """A sampler could not produce valid draws."""


class ConvergenceError(HSMMError):
    """An iterative estimator did not reach its tolerance."""


class InfeasiblePriorError(HSMMError, ValueError):
    """No hyperparameters reproduce the requested prior moments."""


class DataError(HSMMError, ValueError):
    """Input data could not be ingested."""
