"""Exception hierarchy.

``DomainError`` covers bad inputs (outside a support, boundary values,
non-finite numbers).  ``NumericalContractError`` covers runtime failures of
a numerical contract: non-converging solvers, overflow guards, stale
sample sets.  The CLI maps the latter to exit code 2.
"""


class DomainError(ValueError):
    pass


class TransformError(DomainError):
    """A layer of a hierarchical transform failed; ``layer`` is its index."""

    def __init__(self, message, layer=None):
        super().__init__(message if layer is None else f"layer {layer}: {message}")
        self.layer = layer


class NumericalContractError(RuntimeError):
    pass


class OverflowGuardError(NumericalContractError):
    pass


class ConvergenceError(NumericalContractError):
    """Iterative solver did not reach its tolerance.

    The best iterate and its residual are kept so callers can decide
    whether to continue with them.
    """

    def __init__(self, message, best=None, residual=None, iterations=None):
        super().__init__(message)
        self.best = best
        self.residual = residual
        self.iterations = iterations


class StaleSamplesError(NumericalContractError):
    pass


class ConversionError(NumericalContractError):
    pass
