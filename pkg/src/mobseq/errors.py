"""Error taxonomy shared across modules.

Exit-code mapping in the CLI: usage errors 1, DataValidationError 2,
NumericalError 3.
"""


class MobseqError(Exception):
    """Base class for package errors."""


class DataValidationError(MobseqError):
    """Input data violates a documented schema or invariant."""


class NumericalError(MobseqError):
    """A numerical routine failed (rank deficiency, non-convergence, ...)."""
