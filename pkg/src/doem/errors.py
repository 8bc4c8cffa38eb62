"""Exception hierarchy shared across the package.

The CLI maps these onto distinct exit codes, so new failure modes should
subclass one of the three families below rather than raising bare
exceptions.
"""


class DoemError(Exception):
    """Base class for all package errors."""


class ValidationError(DoemError):
    """Invalid input, violated precondition, or capability cap exceeded."""


class ConditionSError(ValidationError):
    """The sufficiency condition between target and model does not hold."""


class NumericError(DoemError):
    """Numerical failure: eigensolver breakdown, NaN parameters, trace
    drift beyond tolerance, or an optimizer step collapse."""


class IdxFormatError(ValidationError):
    """Malformed IDX container (bad magic, truncated payload, bad dims)."""
