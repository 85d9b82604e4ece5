"""Exception types shared across the package."""


class SanError(Exception):
    """Base class for all errors raised by sanpool."""


class DimensionError(SanError, ValueError):
    pass


class DomainError(SanError, ValueError):
    pass


class ContractError(SanError, ValueError):
    pass


class EvaluationError(SanError, ArithmeticError):
    pass


class FormatError(SanError, ValueError):
    """Malformed input file; the message names the byte offset."""


class TrainingError(SanError, RuntimeError):
    def __init__(self, message, epoch=None, batch=None):
        super().__init__(message)
        self.epoch = epoch
        self.batch = batch


class ConfigError(SanError, ValueError):
    def __init__(self, message, key=None):
        super().__init__(message)
        self.key = key
