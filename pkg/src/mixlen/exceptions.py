"""Exception hierarchy shared by every mixlen module."""


class MixlenError(Exception):
    """Base class for all errors raised by this package."""


class DomainError(MixlenError, ValueError):
    """An input lies outside the domain of a formula."""

    def __init__(self, field, value, reason="must be positive and finite"):
        self.field = field
        self.value = value
        super().__init__(f"{field}={value!r}: {reason}")


class LoadError(MixlenError, ValueError):
    """A data file could not be parsed."""

    def __init__(self, message, line=None, field=None):
        self.line = line
        self.field = field
        where = f"line {line}: " if line is not None else ""
        super().__init__(where + message)


class SplitError(MixlenError, ValueError):
    pass


class ConfigError(MixlenError, ValueError):
    pass


class FitError(MixlenError, RuntimeError):
    pass


class TrainingError(FitError):
    """Optimisation produced a non-finite loss."""

    def __init__(self, epoch, loss):
        self.epoch = epoch
        self.loss = loss
        super().__init__(f"non-finite loss {loss!r} at epoch {epoch}")


class UsageError(MixlenError, ValueError):
    pass


class CalibrationError(MixlenError, ValueError):
    pass


class ModelFormatError(MixlenError, ValueError):
    pass
