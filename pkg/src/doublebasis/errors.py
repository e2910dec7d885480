"""Exception types shared across the package.

The CLI maps these onto exit codes: usage problems exit 2, data problems
exit 3, numeric failures exit 4.
"""


class DoubleBasisError(Exception):
    """Base class for package errors."""


class DomainError(DoubleBasisError, ValueError):
    """A point lies outside the unit box the basis is defined on."""


class ResourceError(DoubleBasisError, RuntimeError):
    """An enumeration or allocation would exceed its configured cap."""


class DataError(DoubleBasisError, ValueError):
    """A dataset, model or report file is malformed or inconsistent."""


class NumericError(DoubleBasisError, ArithmeticError):
    """A numerical routine failed to converge or produced non-finite output."""
