"""Exception hierarchy shared across the toolkit."""


class MfPosteriorError(Exception):
    """Base class for toolkit errors."""


class ConfigurationError(MfPosteriorError, ValueError):
    """Inconsistent or incomplete user configuration (CLI exit code 2)."""


class NumericalError(MfPosteriorError, ArithmeticError):
    """Numerical failure (CLI exit code 3)."""


class InputShapeError(MfPosteriorError, ValueError):
    pass


class UnsupportedPrimitiveError(MfPosteriorError, TypeError):
    """A non-differentiable operation was applied to a tape variable."""


class TrainingDivergenceError(NumericalError):
    def __init__(self, message: str, epoch: int):
        super().__init__(f"{message} (epoch {epoch})")
        self.epoch = epoch


class DegenerateSurrogateError(NumericalError):
    pass


class DomainError(MfPosteriorError, ValueError):
    pass


class IntegrationError(NumericalError):
    def __init__(self, message: str, time: float):
        super().__init__(f"{message} at t={time:.6g} s")
        self.time = time


class SamplerError(NumericalError):
    pass


class InsufficientHistoryError(MfPosteriorError, ValueError):
    pass


class DegenerateDataError(NumericalError):
    """Zero-variance inputs to a statistic that needs spread."""


class GridMismatchError(MfPosteriorError, ValueError):
    pass
