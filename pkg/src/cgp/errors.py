"""Shared exception types.

Exit-code mapping used by the CLI: ParseError -> 2, PreconditionError -> 3,
ResourceBudgetError -> 4.
"""


class ParseError(ValueError):
    """Malformed family spec text. Carries the 0-based offset of the problem."""

    def __init__(self, message: str, position: int):
        super().__init__(f"{message} (at offset {position})")
        self.position = position


class PreconditionError(ValueError):
    """An operation was invoked outside its stated contract."""


class ResourceBudgetError(RuntimeError):
    """A configured state/depth budget was exceeded."""
