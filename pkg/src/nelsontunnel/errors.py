class ConfigurationError(ValueError):
    """Invalid or inconsistent simulation parameters."""


class NumericalError(ArithmeticError):
    """A numerical step failed; ``step`` carries the step index when known."""

    def __init__(self, message, step=None):
        if step is not None:
            message = f"{message} (step {step})"
        super().__init__(message)
        self.step = step


class FitError(RuntimeError):
    """A distribution fit did not converge or the data are degenerate.

    ``best`` holds the best iterate reached, if any.
    """

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best
