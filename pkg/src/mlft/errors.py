"""Exception hierarchy shared by all modules."""


class MLFTError(Exception):
    """Base class for every error raised by this package."""


class ResolutionMismatchError(MLFTError, ValueError):
    pass


class TooCoarseError(MLFTError, ValueError):
    pass


class UnsupportedDimensionError(MLFTError, ValueError):
    pass


class SolverDivergenceError(MLFTError, RuntimeError):
    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class StabilityError(MLFTError, RuntimeError):
    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class IndefiniteOperatorError(MLFTError, RuntimeError):
    pass


class SampleGenerationError(MLFTError, RuntimeError):
    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class IllConditionedKernelError(MLFTError, RuntimeError):
    pass


class NumericError(MLFTError, RuntimeError):
    pass


class MissingPairError(MLFTError, ValueError):
    pass


class TrainingDivergenceError(MLFTError, RuntimeError):
    def __init__(self, message, iteration=None, level=None):
        super().__init__(message)
        self.iteration = iteration
        self.level = level


class DegenerateModelError(MLFTError, ValueError):
    pass


class UnderdeterminedError(MLFTError, ValueError):
    pass


class InfeasibleBudgetError(MLFTError, ValueError):
    pass


class ConfigError(MLFTError, ValueError):
    pass
