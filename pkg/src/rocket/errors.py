"""Exception types shared across the package."""


class RocketError(Exception):
    pass


class DimensionError(RocketError, ValueError):
    """Operand shapes do not agree."""


class ContractError(RocketError, ValueError):
    """A precondition of an operation was violated."""


class SpecError(RocketError, ValueError):
    """An architecture, loss or data spec breaks one of its invariants."""


class NonFiniteError(RocketError, ArithmeticError):
    """A computation produced NaN or Inf."""


class FormatError(RocketError, ValueError):
    """A binary or text file does not follow its expected layout."""
