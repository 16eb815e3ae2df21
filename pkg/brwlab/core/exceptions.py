"""
Custom exceptions for brwlab.

Every exception carries a stable error code and the CLI exit code it maps to,
so failures can be written into run manifests and reported consistently.
"""
from typing import Any, Optional

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RESOURCE = 3
EXIT_CONSISTENCY = 4


class BRWLabError(Exception):
    """
    Base exception for brwlab errors.

    Carries an error code, a human-readable message and the process exit code.
    """

    def __init__(
        self,
        error_code: str,
        error_message: str,
        exit_code: int = EXIT_CONSISTENCY,
        error_type: str = "internal_error",
    ):
        self.error_code = error_code
        self.error_message = error_message
        self.exit_code = exit_code
        self.error_type = error_type
        super().__init__(f"[{error_code}] {error_message}")

    def to_dict(self) -> dict:
        """Serializable form stored in run manifests."""
        return {
            "code": self.error_code,
            "type": self.error_type,
            "message": self.error_message,
            "exit_code": self.exit_code,
        }


class ConfigurationError(BRWLabError):
    """
    Malformed spec strings, arity or weight mismatches, kernel/graph mismatches.

    Maps to exit code 2.
    """

    def __init__(self, error_message: str):
        super().__init__(
            error_code="ConfigurationError",
            error_message=error_message,
            exit_code=EXIT_CONFIG,
            error_type="config_error",
        )


class AddressError(BRWLabError):
    """
    Malformed vertex address (wrong alphabet, wrong arity, non-canonical spelling).

    Maps to exit code 2.
    """

    def __init__(self, error_message: str, address: Any = None):
        super().__init__(
            error_code="AddressError",
            error_message=error_message,
            exit_code=EXIT_CONFIG,
            error_type="config_error",
        )
        self.address = address


class DomainError(BRWLabError):
    """Parameter outside the domain of an operation. Maps to exit code 2."""

    def __init__(self, error_message: str):
        super().__init__(
            error_code="DomainError",
            error_message=error_message,
            exit_code=EXIT_CONFIG,
            error_type="config_error",
        )


class ResourceError(BRWLabError):
    """
    A support, row or population cap was exceeded.

    Maps to exit code 3.
    """

    def __init__(self, error_message: str, error_code: str = "ResourceError"):
        super().__init__(
            error_code=error_code,
            error_message=error_message,
            exit_code=EXIT_RESOURCE,
            error_type="resource_error",
        )


class TruncationError(ResourceError):
    """
    Population cap exceeded during a simulation.

    Carries the partial trace and the generation at which the cap was hit.
    """

    def __init__(self, error_message: str, partial_trace: Any, generation: int):
        super().__init__(error_message, error_code="TruncationError")
        self.partial_trace = partial_trace
        self.generation = generation


class InsufficientDataError(ResourceError):
    """Too few usable terms for a fit or search; extend the horizon."""

    def __init__(self, error_message: str):
        super().__init__(error_message, error_code="InsufficientDataError")


class UnavailableDataError(ResourceError):
    """Requested generation states were discarded by the retention policy."""

    def __init__(self, error_message: str):
        super().__init__(error_message, error_code="UnavailableDataError")


class SampleFailureError(ResourceError):
    """No particle reached the designated subgraph within the budget."""

    def __init__(self, error_message: str, replication: Optional[int] = None):
        super().__init__(error_message, error_code="SampleFailureError")
        self.replication = replication


class InternalConsistencyError(BRWLabError):
    """
    An exact identity failed; signals a kernel or engine bug.

    Maps to exit code 4.
    """

    def __init__(self, error_message: str):
        super().__init__(
            error_code="InternalConsistencyError",
            error_message=error_message,
            exit_code=EXIT_CONSISTENCY,
            error_type="internal_error",
        )


def exit_code_for(exc: BaseException) -> int:
    """
    Map an exception to the CLI exit code.

    Args:
        exc: Any exception raised while running an experiment

    Returns:
        Exit code (2 config, 3 resource, 4 internal)
    """
    if isinstance(exc, BRWLabError):
        return exc.exit_code
    if isinstance(exc, (ValueError, TypeError)):
        # pydantic validation errors subclass ValueError
        return EXIT_CONFIG
    return EXIT_CONSISTENCY


def error_record(exc: BaseException) -> dict:
    """Manifest entry for an exception of any type."""
    if isinstance(exc, BRWLabError):
        return exc.to_dict()
    return {
        "code": type(exc).__name__,
        "type": "config_error" if exit_code_for(exc) == EXIT_CONFIG else "internal_error",
        "message": str(exc),
        "exit_code": exit_code_for(exc),
    }
