"""Exception hierarchy; the CLI maps every ``NumericalError`` to exit code 2."""


class NumericalError(RuntimeError):
    """A solver could not produce a trustworthy result."""


class IntegrationError(NumericalError):
    pass


class NoCycleDetected(NumericalError):
    pass


class NewtonError(NumericalError):
    pass


class SingularSystemError(NumericalError):
    pass


class ConvergenceError(NumericalError):
    pass
