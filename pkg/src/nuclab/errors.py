"""Exception hierarchy shared by all nuclab modules."""


class NuclabError(Exception):
    """Base class for every error raised by the package."""


class ValidationError(NuclabError, ValueError):
    """Input violates a domain invariant (non-unit vector, non-positive volume...)."""


class ParameterError(NuclabError, ValueError):
    """Construction parameter outside its admissible range."""


class DegenerateDirectionError(NuclabError, ValueError):
    """Operation undefined for nu = +-e_d."""


class RegimeError(NuclabError, ValueError):
    """Volume lies on the wrong side of the regime threshold."""


class CapabilityError(NuclabError):
    """Requested method is not supported for this input."""


class ResolutionError(NuclabError, ValueError):
    """Grid too coarse for the requested shape."""


class FitError(NuclabError, ValueError):
    """Not enough data for a log-log fit."""


class ConsistencyError(NuclabError, RuntimeError):
    """Internal consistency check failed; indicates a bug in a construction."""
