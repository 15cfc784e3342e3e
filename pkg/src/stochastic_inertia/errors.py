"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid configuration or arguments."""


class NumericalError(RuntimeError):
    """A numerical procedure blew up, diverged or failed to converge."""


class BlowUpError(NumericalError):
    """Integrated state became non-finite."""


class SingularChainError(NumericalError):
    """``Id - Q`` is singular: the restricted chain has an invariant subset."""


class ConvergenceError(NumericalError):
    def __init__(self, message, residual=None):
        super().__init__(message if residual is None else f"{message} (residual {residual:.3e})")
        self.residual = residual


class IrreducibilityError(NumericalError):
    """The chain built from the data is not irreducible."""

    def __init__(self, message, indices=None):
        super().__init__(message)
        self.indices = indices

