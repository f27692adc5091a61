"""Exception types raised across the toolkit."""


class ShapeError(ValueError):
    """Array dimensions do not chain or do not match the model."""


class UsageError(ValueError):
    """An argument is outside the documented domain of an operation."""


class DivergenceError(RuntimeError):
    def __init__(self, epoch: int, value: float):
        super().__init__(f"training diverged at epoch {epoch}: loss={value!r}")
        self.epoch = epoch
        self.value = value


class CollapseError(RuntimeError):
    def __init__(self, component: int, weight: float):
        super().__init__(
            f"mixture component {component} collapsed (weight={weight:.3g})"
        )
        self.component = component
        self.weight = weight


class ParseError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class ConfigError(ValueError):
    """Invalid or unknown configuration key/value."""


class PartitionDegeneracyError(RuntimeError):
    """Partition produced an empty clean or noisy subset.

    ``gamma`` holds the responsibilities so the caller can dump them.
    """

    def __init__(self, message: str, gamma=None):
        super().__init__(message)
        self.gamma = gamma
