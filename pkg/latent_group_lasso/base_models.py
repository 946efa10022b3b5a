from __future__ import annotations

import abc
import enum
import typing as t

import numpy as np
from pydantic import BaseModel, ConfigDict, NonNegativeFloat, NonNegativeInt

if t.TYPE_CHECKING:
    from latent_group_lasso.group_model import ActiveSet


class ArrayModel(BaseModel):
    model_config = ConfigDict(extra="forbid", arbitrary_types_allowed=True)


class FrozenArrayModel(BaseModel):
    model_config = ConfigDict(
        extra="forbid", arbitrary_types_allowed=True, frozen=True
    )


class BackendName(str, enum.Enum):
    cyclic = "cyclic"
    dual_newton = "dual_newton"
    exact_groupwise = "exact_groupwise"


class Projection(ArrayModel):
    """Approximate projection returned by a backend.

    `multipliers` is only filled by backends that solve a dual problem; it is
    indexed like `active_set.members`.
    """

    point: np.ndarray
    iterations: NonNegativeInt
    residual: NonNegativeFloat
    multipliers: np.ndarray | None = None
    backend: BackendName


class ProjectionBackend(abc.ABC):
    """Maps (x, radius, active groups, q, tol) to an approximation of the
    projection of x onto radius * K restricted to the active groups, within
    Euclidean distance tol."""

    name: t.ClassVar[BackendName]

    @abc.abstractmethod
    def project(
        self,
        x: np.ndarray,
        radius: float,
        active_set: ActiveSet,
        q: float,
        tol: float,
        warm_start: np.ndarray | None = None,
    ) -> Projection: ...
