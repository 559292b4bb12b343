"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Operand shapes are inconsistent with the operation's contract."""


class ConfigError(ValueError):
    """A configuration value is invalid or unusable."""


class SpecError(ConfigError):
    """A network description violates its structural invariants."""


class NoExamplesError(ConfigError):
    """No training pairs could be extracted from the given image."""


class TrainingDiverged(RuntimeError):
    """Training hit a non-finite loss.

    Carries the last checkpoint taken before the divergence (may be None
    if the failure happened before the first checkpoint).
    """

    def __init__(self, message, last_good=None, step=None):
        super().__init__(message)
        self.last_good = last_good
        self.step = step
