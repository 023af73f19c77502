"""Exception types shared across the package."""


class TmeraError(Exception):
    """Base class for all package errors."""


class InvalidGeneratorError(TmeraError):
    """Rotation generator is not a Hermitian unitary."""


class DegenerateProjectionError(TmeraError):
    """Matrix is too close to singular to project onto the unitary group."""


class KakDegeneracyError(TmeraError):
    """Magic-basis spectrum could not be resolved into a canonical form."""


class ArityError(TmeraError):
    """Angle vector has the wrong length for the requested gate form."""


class EmbeddingError(TmeraError):
    """Operator and register shapes are incompatible."""


class TopologyError(TmeraError):
    """Transition map applied to a state with the wrong bond parity."""


class UnsupportedNetworkError(TmeraError):
    """Network kind cannot be simulated (resource estimation only)."""


class ResourceError(TmeraError):
    """Requested computation exceeds the configured size caps."""


class WrongParametrizationError(TmeraError):
    """Operation requires an angle-parametrized form."""


class NoReferenceError(TmeraError):
    """No independent reference energy is available for the model."""


class LineSearchError(TmeraError):
    """Wolfe line search could not find an admissible step."""


class ConfigError(TmeraError):
    """Run configuration failed validation."""
