"""Exception types shared across the package."""

from __future__ import annotations


class CotExitError(Exception):
    """Base class for all errors raised by cotexit."""


class ConfigurationError(CotExitError, ValueError):
    """Invalid configuration: unknown key, out-of-range value, dimension drift."""


class DomainError(CotExitError, ValueError):
    """A numeric routine was called outside its domain."""


class ContractViolation(CotExitError, ValueError):
    """A caller broke a documented precondition."""


class ProbeMalformed(CotExitError):
    """A trial-answer probe produced no extractable answer."""


class BackendError(CotExitError):
    """Transport or protocol failure talking to a generation/embedding backend."""


class CapabilityError(BackendError):
    """The backend does not provide something we require (e.g. logprobs)."""


class MissingFieldError(CotExitError, ValueError):
    """An input record lacks a field required by the requested analysis."""
