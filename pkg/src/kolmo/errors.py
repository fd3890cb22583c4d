"""Exception hierarchy shared by all modules."""


class KolmoError(Exception):
    """Base class for package errors."""


class StructureError(KolmoError, ValueError):
    """Inconsistent shapes or malformed structural parameters."""


class ConfigError(KolmoError, ValueError):
    """A configuration document could not be parsed or is invalid."""


class NumericalError(KolmoError, RuntimeError):
    """A numerical procedure failed (factorization, all paths truncated, ...)."""


class EquivalenceViolation(KolmoError, AssertionError):
    """Stationary and evolution regularity verdicts disagree."""
