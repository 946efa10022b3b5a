"""Proximity operator of the latent group lasso penalty.

prox_{lam Omega}(x) = x - pi_{lam K}(x), where K = {u : ||u||_{G,q} <= 1 for all G}
is the unit ball of the dual norm. Only the groups with ||x||_{G,q} > lam can
bind, so the projection is computed over those groups alone.
"""

from __future__ import annotations

import logging
import math

import numpy as np
from pydantic import NonNegativeFloat, NonNegativeInt, PositiveFloat

from latent_group_lasso.base_models import (
    ArrayModel,
    BackendName,
    ProjectionBackend,
)
from latent_group_lasso.errors import ConvergenceError, StructureError
from latent_group_lasso.group_model import (
    ActiveSet,
    ExponentPair,
    GroupStructure,
    active_groups,
    exponent_pair,
)
from latent_group_lasso.proj_cyclic import CyclicBackend, project_l1_ball
from latent_group_lasso.proj_dual_newton import DualNewtonBackend
from latent_group_lasso.utils import as_vector

logger = logging.getLogger(__name__)

PENALTY_MAX_ITER = 10_000


class ProxResult(ArrayModel):
    prox_point: np.ndarray
    projection_point: np.ndarray
    active_set: ActiveSet
    scale: PositiveFloat
    backend_iterations: NonNegativeInt
    achieved_tolerance_estimate: NonNegativeFloat
    backend: BackendName | None = None
    multipliers: np.ndarray | None = None

    @property
    def penalty(self) -> float:
        """Omega(prox_point), read off the Moreau decomposition:
        Omega(x - pi_{lam K}(x)) = <x - pi_{lam K}(x), pi_{lam K}(x)> / lam."""
        return max(float(self.prox_point @ self.projection_point) / self.scale, 0.0)


def get_backend(
    name: BackendName | str | ProjectionBackend, **options
) -> ProjectionBackend:
    if isinstance(name, ProjectionBackend):
        return name
    name = BackendName(name)
    if name is BackendName.cyclic:
        return CyclicBackend(**options)
    if name is BackendName.dual_newton:
        return DualNewtonBackend(**options)
    raise StructureError(
        f'Backend "{name.value}" only applies to the replicated formulation'
    )


def default_backend(p: ExponentPair) -> ProjectionBackend:
    return DualNewtonBackend() if p.q == 2.0 else CyclicBackend()


def prox(
    x: np.ndarray,
    lam: float,
    gs: GroupStructure,
    p: float | ExponentPair = 2.0,
    backend: BackendName | str | ProjectionBackend | None = None,
    tol: float = 1e-8,
    warm_start: np.ndarray | None = None,
) -> ProxResult:
    """Approximate prox of lam * Omega at x, the projection within tol.

    `warm_start` holds dual multipliers for every group of `gs` (zeros where
    a group was inactive); the result returns them in the same layout.
    """
    if not lam > 0:
        raise StructureError(f"prox scale must be positive, got {lam}")
    if not tol > 0:
        raise StructureError(f"prox tolerance must be positive, got {tol}")
    pair = exponent_pair(p)
    x = as_vector(x, gs.d, "x")
    backend = default_backend(pair) if backend is None else get_backend(backend)

    active = active_groups(x, lam, gs, pair.q)
    if active.is_empty:
        return ProxResult(
            prox_point=np.zeros(gs.d),
            projection_point=x.copy(),
            active_set=active,
            scale=lam,
            backend_iterations=0,
            achieved_tolerance_estimate=0.0,
            backend=backend.name,
            multipliers=np.zeros(gs.n_groups),
        )

    projection = backend.project(x, lam, active, pair.q, tol, warm_start=warm_start)
    prox_point = x - projection.point
    prox_point[~active.covered] = 0.0

    multipliers = np.zeros(gs.n_groups)
    if projection.multipliers is not None:
        multipliers[active.members] = projection.multipliers
    return ProxResult(
        prox_point=prox_point,
        projection_point=projection.point,
        active_set=active,
        scale=lam,
        backend_iterations=projection.iterations,
        achieved_tolerance_estimate=projection.residual,
        backend=projection.backend,
        multipliers=multipliers,
    )


def penalty_value(
    x: np.ndarray,
    gs: GroupStructure,
    p: float | ExponentPair = 2.0,
    tol: float = 1e-6,
    backend: BackendName | str | ProjectionBackend | None = None,
    max_iter: int = PENALTY_MAX_ITER,
) -> float:
    """Omega(x) as the support function of K at x, by projected ascent.

    Runs u <- pi_K(u + x/||x||) and reports the best of the iterates and their
    running average. Stops when the objective gain of a step drops below
    tol * max(1, value).
    """
    pair = exponent_pair(p)
    x = as_vector(x, gs.d, "x")
    norm = float(np.linalg.norm(x))
    if norm == 0.0:
        return 0.0
    backend = default_backend(pair) if backend is None else get_backend(backend)
    step = 1.0 / norm
    inner_tol = tol / (10.0 * norm)

    u = np.zeros(gs.d)
    average = np.zeros(gs.d)
    current = 0.0
    best = 0.0
    for k in range(1, max_iter + 1):
        z = u + step * x
        active = active_groups(z, 1.0, gs, pair.q)
        if active.is_empty:
            u_next = z
        else:
            u_next = backend.project(z, 1.0, active, pair.q, inner_tol).point
        average += (u_next - average) / k
        value = float(x @ u_next)
        best = max(best, value, float(x @ average))
        gain = value - current
        u, current = u_next, value
        if k > 1 and abs(gain) <= tol * max(1.0, abs(best)):
            logger.debug("penalty value %.12g after %d ascent steps", best, k)
            return best
    raise ConvergenceError(
        "projected ascent for the penalty value did not settle",
        iterations=max_iter,
        residual=abs(gain),
        best_estimate=u,
    )


def prox_replicated(
    v: np.ndarray,
    lam: float,
    gs: GroupStructure,
    p: float | ExponentPair = 2.0,
) -> np.ndarray:
    """Exact group-wise prox of lam * sum_r ||v_r||_p in the latent space."""
    if not lam > 0:
        raise StructureError(f"prox scale must be positive, got {lam}")
    pair = exponent_pair(p)
    v = as_vector(v, gs.replicated_dim, "latent vector")
    if pair.q == 2.0:
        norms = gs.block_norms(v, 2.0)
        with np.errstate(divide="ignore", invalid="ignore"):
            shrink = np.where(norms > lam, 1.0 - lam / norms, 0.0)
        return v * np.repeat(shrink, gs.group_sizes)
    if math.isinf(pair.p):
        return np.concatenate(
            [block - project_l1_ball(block, lam) for block in gs.blocks(v)]
        )
    raise StructureError(
        f"Group-wise prox has no closed form for p={pair.p}; use p=2 or p=inf"
    )


def support_function_at_prox(result: ProxResult) -> float:
    return result.penalty
