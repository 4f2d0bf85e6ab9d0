class CapmeterError(Exception):
    """Root of every error raised by capmeter."""


class ShapeError(CapmeterError, ValueError):
    pass


class NonFiniteError(CapmeterError, ValueError):
    pass


class DegenerateInputError(CapmeterError, ValueError):
    pass


class SizeLimitError(CapmeterError, ValueError):
    pass


class ConvergenceError(CapmeterError, ArithmeticError):
    pass


class DivergenceError(CapmeterError, ArithmeticError):
    pass


class BoundDomainError(CapmeterError, ValueError):
    pass


class CheckpointError(CapmeterError, ValueError):
    pass


class ConstraintViolation(CapmeterError, AssertionError):
    pass


class DatasetError(CapmeterError, ValueError):
    pass


class IdxMagicError(DatasetError):
    pass


class TruncatedFileError(DatasetError):
    pass


class LabelRangeError(DatasetError):
    pass


class CsvFormatError(DatasetError):
    pass


class UsageError(CapmeterError):
    """Bad command-line arguments."""


class ConfigError(CapmeterError):
    """A ``--config`` file or flag combination that cannot be honored."""
