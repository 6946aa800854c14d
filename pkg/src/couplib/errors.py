"""Exception hierarchy shared by all couplib modules."""


class CouplingError(Exception):
    """Base class for all errors raised by couplib."""


class ConfigurationError(CouplingError):
    """A configuration document or setup call violates a config invariant."""


class ValidationError(CouplingError):
    """Runtime data handed to the API is malformed (NaN, wrong length, ...)."""


class StateError(CouplingError):
    """A call arrived in a lifecycle state that does not permit it."""


class DomainError(CouplingError):
    """A time argument lies outside the valid evaluation domain."""


class TransportError(CouplingError):
    """The peer connection failed or was closed unexpectedly."""


class HandshakeError(TransportError):
    """The peers disagree on protocol version or identity."""
