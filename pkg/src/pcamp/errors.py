"""Exceptions and warning categories shared across the package."""


class PcampError(Exception):
    """Base class for package errors."""


class DomainError(PcampError, ValueError):
    """Argument outside the mathematical domain of a transform."""


class ParamError(PcampError, ValueError):
    """Invalid parameter for a denoiser or model constructor."""


class NoConvergenceError(PcampError, RuntimeError):
    """An iterative solver hit its iteration cap without converging."""


class NoSpectralGapError(PcampError, RuntimeError):
    """Top eigen/singular value does not detach from the bulk; SNR
    estimation is undefined."""


class AllocationError(PcampError, MemoryError):
    """Requested dense matrix exceeds the configured size cap."""


class FactorizationError(PcampError, RuntimeError):
    """Covariance matrix is too far from PSD to factor."""


class SchemaError(PcampError, ValueError):
    """CSV input does not match the expected schema."""


class ConfigError(PcampError, ValueError):
    """Malformed experiment configuration."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class TruncationWarning(UserWarning):
    """A truncated series tail bound exceeded the requested tolerance."""
