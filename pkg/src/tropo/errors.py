"""Exception hierarchy shared by all modules.

Three failure families map onto the CLI exit codes: bad invocations
(UsageError, exit 2), physics/parameter domain violations (DomainError,
exit 3) and malformed or inconsistent measurement data (DataError,
exit 4).
"""


class TropoError(Exception):
    """Base class for all package errors."""


class UsageError(TropoError):
    """Caller passed arguments that make no sense (empty sweep, zero-width window)."""


class DomainError(TropoError):
    """Input outside a model's validity domain (wavelength window, loss >= 1, ...)."""


class NotFoundError(DomainError):
    """A requested root/solution does not exist in the search window."""


class DataError(TropoError):
    """Measured-trace files are inconsistent (analyzer settings mismatch, N2 <= 0)."""


class ImpedanceMatchedError(DomainError):
    """The reflected mean field vanishes; the intensity quadrature is undefined."""
