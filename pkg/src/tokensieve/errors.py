"""Exception hierarchy shared by every module.

The CLI maps these onto exit codes: configuration problems exit 1,
runtime pipeline failures exit 2, I/O and file-format problems exit 3.
"""


class TokenSieveError(Exception):
    """Base class for all library errors."""


class ShapeError(TokenSieveError):
    """Operand dimensions (or dtypes) do not conform."""


class ParameterError(TokenSieveError):
    """A scalar parameter or configuration value is out of its valid range."""


class DegenerateInputError(TokenSieveError):
    """Input is structurally valid but numerically unusable (zero row, empty query, ...)."""


class TilingError(TokenSieveError):
    """Image dimensions are not divisible into whole patches."""


class FormatError(TokenSieveError):
    """An embedding file violates the on-disk format; message names the byte offset."""


class BudgetError(TokenSieveError):
    """Token count too small for the requested select/compress ratios."""


class ContractError(TokenSieveError):
    """An internal contract was violated by the caller (e.g. non-scalar loss)."""


class StageError(TokenSieveError):
    """A pipeline stage failed; carries the stage name and chains the cause."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage '{stage}': {cause}")
        self.stage = stage
        self.cause = cause
