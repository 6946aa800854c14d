"""couplib: black-box multi-rate coupling of time-stepping solvers.

Two (or more) solvers exchange interface data through interpolated
waveforms per time window, iterating implicitly with under-relaxation or
quasi-Newton acceleration over a TCP or in-process peer channel.
"""

from .comm import InProcessChannel
from .config import CouplingConfig, load_config, parse_config
from .errors import (
    ConfigurationError,
    CouplingError,
    DomainError,
    HandshakeError,
    StateError,
    TransportError,
    ValidationError,
)
from .participant import Participant
from .storage import Sample, Stample, Storage

__all__ = [
    "CouplingConfig",
    "ConfigurationError",
    "CouplingError",
    "DomainError",
    "HandshakeError",
    "InProcessChannel",
    "Participant",
    "Sample",
    "Stample",
    "StateError",
    "Storage",
    "TransportError",
    "ValidationError",
    "load_config",
    "parse_config",
]
