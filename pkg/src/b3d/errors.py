"""Exception hierarchy and the process exit codes the CLI maps it onto.

Exit code contract: 0 success, 2 configuration error, 3 precondition error,
4 remote-service error, 5 integrity error.
"""

from __future__ import annotations

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_PRECONDITION = 3
EXIT_REMOTE = 4
EXIT_INTEGRITY = 5


class B3DError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class ConfigError(B3DError):
    """Invalid or missing configuration (bad config file, unknown key, missing input path)."""

    exit_code = EXIT_CONFIG


class ParameterError(B3DError):
    """An argument violates an operation's precondition."""

    exit_code = EXIT_PRECONDITION


class RangeError(ParameterError):
    """A scalar argument is outside its permitted range."""


class ShapeError(ParameterError):
    """An array argument has the wrong shape or size."""


class PolicyError(ParameterError):
    """A timestep-policy lookup or constraint failed."""


class RemoteServiceError(B3DError):
    """A remote generator/captioner call failed after retries."""

    exit_code = EXIT_REMOTE


class ProtocolError(RemoteServiceError):
    """A remote service answered, but the payload violates the wire contract."""


class ScoringError(RemoteServiceError):
    """A remote scorer response could not be parsed into a quality label."""


class CaptionError(RemoteServiceError):
    """A remote captioner returned an unusable caption."""


class IntegrityError(B3DError):
    """Stored data failed a checksum or consistency check."""

    exit_code = EXIT_INTEGRITY
