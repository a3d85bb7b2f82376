"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Operand shapes do not conform."""


class DomainError(ValueError):
    """A value lies outside an operation's mathematical domain."""


class OracleError(RuntimeError):
    """A verification oracle could not produce a trustworthy value."""


class DataFormatError(ValueError):
    """A serialized artifact violates its container format."""


class ConfigError(ValueError):
    """A configuration field failed validation."""


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss."""

    def __init__(self, batch_index: int, seed: int):
        self.batch_index = batch_index
        self.seed = seed
        super().__init__(
            f"training loss became non-finite at batch {batch_index} (seed {seed}); "
            f"lower the learning rate or regenerate the dataset"
        )
