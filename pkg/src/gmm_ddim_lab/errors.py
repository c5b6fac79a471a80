"""Exception types raised across the package."""


class ParameterError(ValueError):
    """An argument is outside its documented domain."""


class ScheduleOrderError(ValueError):
    """Cumulative alphas are not decreasing along the requested step pair."""


class SingularStepError(ZeroDivisionError):
    """The step has alpha == 1, so the noise prediction is undefined."""


class VarianceOverflowError(ValueError):
    """Reverse-kernel variance exceeds what the target marginal allows."""


class CapExceededError(RuntimeError):
    """Exact mixture enumeration would exceed the configured component cap."""


class InvalidKernelError(ValueError):
    """A transition covariance is not positive semi-definite."""
