"""Exception hierarchy shared by all riskalloc modules."""


class RiskAllocError(Exception):
    """Base class for library errors."""


class InvalidArgumentError(RiskAllocError, ValueError):
    """A precondition on an argument was violated."""


class RejectedConfigurationError(RiskAllocError):
    """A configuration was rejected before any computation started.

    Raised for solver stability violations, measure-tilt bounds and
    enumeration budgets.  ``detail`` carries the quantity that would make
    the configuration admissible (e.g. the required number of steps).
    """

    def __init__(self, message, **detail):
        super().__init__(message)
        self.detail = detail


class NumericalFailureError(RiskAllocError):
    """A computation failed numerically (singular regression, overflow)."""

    def __init__(self, message, **diagnostics):
        super().__init__(message)
        self.diagnostics = diagnostics


class InadmissibleKernelError(RiskAllocError):
    """The conjugate of the driver is infinite along the supplied kernel."""


class NotApplicableError(RiskAllocError):
    """The requested check or formula does not apply to the given inputs."""


class PayoffSyntaxError(RiskAllocError, ValueError):
    """Payoff expression could not be parsed; ``position`` is the offset."""

    def __init__(self, message, position=None):
        super().__init__(message)
        self.position = position


class PayoffEvaluationError(RiskAllocError, ArithmeticError):
    """Payoff expression hit a domain error; ``state`` names the point."""

    def __init__(self, message, state=None):
        super().__init__(message)
        self.state = state


class ConfigError(RiskAllocError):
    """Scenario configuration file is invalid."""
