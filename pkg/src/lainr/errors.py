"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Operand shapes are incompatible."""


class ContractError(ValueError):
    """A precondition of an operation was violated."""


class ConfigError(ValueError):
    """A configuration value is missing, malformed or inconsistent.

    ``field`` names the offending key when it is known, so command-line
    tools can report field-level messages.
    """

    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field


class TrainingDiverged(RuntimeError):
    """Raised when the loss becomes non-finite during optimization."""


class FormatError(ValueError):
    """A serialized file is malformed or has an unsupported version."""
