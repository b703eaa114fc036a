"""Exception types raised by the toolkit."""


class ShapeError(ValueError):
    """An operation received operands whose shapes do not conform."""

    def __init__(self, op: str, left: tuple, right: tuple, detail: str = ""):
        self.op = op
        self.left = tuple(left)
        self.right = tuple(right)
        message = f"{op}: incompatible shapes {self.left} and {self.right}"
        if detail:
            message += f" ({detail})"
        super().__init__(message)


class SchemaError(ValueError):
    """Dataset contents disagree with the feature schema."""


class ConfigError(ValueError):
    """Model or training configuration is inconsistent."""


class CheckpointError(ValueError):
    """Checkpoint is unreadable or belongs to a different dataset."""


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss or gradient."""

    def __init__(self, message: str, step: int | None = None, parameter: str | None = None):
        self.step = step
        self.parameter = parameter
        super().__init__(message)
