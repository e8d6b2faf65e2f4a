"""Exception hierarchy shared across the package."""


class DelaySviError(Exception):
    """Base class for all package errors."""


class ValidationError(DelaySviError):
    """A configuration or cross-field constraint was violated (CLI exit 2)."""


class NumericError(DelaySviError):
    """A numeric computation failed: NaN/explosion, solver cap hit (CLI exit 3)."""


class InvalidInputError(DelaySviError):
    """An operation received non-finite or otherwise malformed inputs."""


class DomainError(DelaySviError):
    """A point lies strictly outside the closure of the constraint domain."""


class StateError(DelaySviError):
    """An object was queried in a state that does not support the query."""


class PreconditionError(DelaySviError):
    """A documented operation precondition does not hold."""
