from __future__ import annotations

import numpy as np
from pydantic import ValidationError

GroupValidationError = ValidationError


class LatentGroupLassoError(Exception):
    """Base class for every error raised by this package."""


class StructureError(LatentGroupLassoError, ValueError):
    """Group indices, dimensions or grids that do not fit together."""


class InputError(LatentGroupLassoError, ValueError):
    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}")


class ConvergenceError(LatentGroupLassoError):
    def __init__(
        self,
        message: str,
        *,
        iterations: int,
        residual: float,
        best_estimate: np.ndarray | None = None,
    ):
        self.iterations = iterations
        self.residual = residual
        self.best_estimate = best_estimate
        super().__init__(
            f"{message} (after {iterations} iterations, residual {residual:.3e})"
        )


class NewtonFallback(ConvergenceError):
    """The projected Newton step cannot make progress; use cyclic projections."""


class NumericalError(LatentGroupLassoError, ArithmeticError):
    def __init__(self, message: str, *, iteration: int):
        self.iteration = iteration
        super().__init__(f"{message} at iteration {iteration}")
