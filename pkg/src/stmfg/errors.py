"""Exception taxonomy shared across the package.

The CLI maps these to exit codes: DataError -> 2, ContractError (and its
subclasses) -> 3, NumericError -> 4.
"""


class StmfgError(Exception):
    """Base class for all package errors."""


class ContractError(StmfgError):
    """A caller violated an operation's precondition."""


class DimensionError(ContractError):
    """Operand shapes are incompatible."""


class DomainError(ContractError):
    """A value lies outside an operation's numeric domain."""


class DataError(StmfgError):
    """Input data is malformed or inconsistent."""


class NumericError(StmfgError):
    """A computation produced non-finite values."""
