class HybridTrainError(Exception):
    pass


class ConfigError(HybridTrainError, ValueError):
    pass


class DimensionError(HybridTrainError, ValueError):
    pass


class StateError(HybridTrainError, RuntimeError):
    pass


class NumericError(HybridTrainError, FloatingPointError):
    pass


class FormatError(HybridTrainError, ValueError):
    pass


class DataError(HybridTrainError, ValueError):
    pass


class FitnessError(HybridTrainError, RuntimeError):
    """Raised when the fitness function fails on a specific individual."""

    def __init__(self, index: int, cause: BaseException):
        super().__init__(f"fitness evaluation failed for individual {index}: {cause!r}")
        self.index = index


class DivergenceError(NumericError):
    """Training produced a non-finite loss. Carries the records made so far."""

    def __init__(self, message: str, records=None):
        super().__init__(message)
        self.records = list(records or [])
