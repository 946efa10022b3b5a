"""Projection onto tau*K for p=2 through its Lagrangian dual.

The dual over the active groups is

    f(lam) = -sum_j x_j^2 / (1 + sum_r 1_{r,j} lam_r) - tau^2 sum_r lam_r,  lam >= 0,

and the projection is v_j = x_j / (1 + sum_r 1_{r,j} lam*_r). The dual is
maximized with a projected Newton method that diagonalizes the Hessian on the
epsilon-active bound constraints.

For any lam >= 0, shrinking the covered part of v(lam) until every group fits
gives a feasible point u, and ||u - v*||^2 <= P(u) - D(lam) where P is the
squared distance to x and D(lam) = ||x||^2 + f(lam). That gap is the distance
certificate the iteration stops on.
"""

from __future__ import annotations

import logging
import math

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg
from pydantic import NonNegativeFloat, NonNegativeInt

from latent_group_lasso.base_models import (
    ArrayModel,
    BackendName,
    Projection,
    ProjectionBackend,
)
from latent_group_lasso.errors import ConvergenceError, NewtonFallback, StructureError
from latent_group_lasso.group_model import ActiveSet
from latent_group_lasso.proj_cyclic import CyclicBackend

logger = logging.getLogger(__name__)

DENSE_LIMIT = 512
MAX_BACKTRACKS = 60
RIDGE = 1e-10
KKT_FLOOR_ULPS = 256
STALL_FACTOR = 1e4
GAP_ERROR_ULPS = 16
FALLBACK_MAX_ITER = 200_000


def denominators(lam: np.ndarray, active_set: ActiveSet) -> np.ndarray:
    return 1.0 + active_set.indicator @ lam


def dual_value(
    lam: np.ndarray, x: np.ndarray, tau: float, active_set: ActiveSet
) -> float:
    den = denominators(lam, active_set)
    return float(-np.sum(x * x / den) - tau * tau * np.sum(lam))


def dual_increase(
    lam: np.ndarray,
    candidate: np.ndarray,
    x: np.ndarray,
    tau: float,
    active_set: ActiveSet,
) -> float:
    """f(candidate) - f(lam), summed group by group instead of subtracting two
    values of size ||x||^2."""
    step = candidate - lam
    weights = x * x / (
        denominators(lam, active_set) * denominators(candidate, active_set)
    )
    return float(step @ (active_set.indicator.T @ weights - tau * tau))


def dual_gradient(
    lam: np.ndarray, x: np.ndarray, tau: float, active_set: ActiveSet
) -> np.ndarray:
    den = denominators(lam, active_set)
    return active_set.indicator.T @ (x * x / (den * den)) - tau * tau


def dual_hessian(
    lam: np.ndarray, x: np.ndarray, tau: float, active_set: ActiveSet
) -> sp.csr_matrix:
    """Sparse B̂ x B̂ Hessian; entry (r, s) vanishes when the groups are disjoint."""
    den = denominators(lam, active_set)
    weights = sp.diags(2.0 * x * x / den**3)
    indicator = active_set.indicator
    return -(indicator.T @ weights @ indicator).tocsr()


def primal_from_dual(
    lam: np.ndarray, x: np.ndarray, active_set: ActiveSet
) -> np.ndarray:
    return x / denominators(lam, active_set)


class DualState(ArrayModel):
    multipliers: np.ndarray
    active_set: ActiveSet
    denominators: np.ndarray
    value: float
    gradient: np.ndarray
    hessian: sp.csr_matrix

    @classmethod
    def at(
        cls, lam: np.ndarray, x: np.ndarray, tau: float, active_set: ActiveSet
    ) -> DualState:
        den = denominators(lam, active_set)
        return cls(
            multipliers=lam,
            active_set=active_set,
            denominators=den,
            value=dual_value(lam, x, tau, active_set),
            gradient=dual_gradient(lam, x, tau, active_set),
            hessian=dual_hessian(lam, x, tau, active_set),
        )


class FeasibleRecovery(ArrayModel):
    """v(lam) shrunk onto tau*K^Ĝ, with the certificate of its distance to v*."""

    point: np.ndarray
    gradient: np.ndarray
    radius: float
    kkt_residual: NonNegativeFloat
    violation: NonNegativeFloat
    gap: NonNegativeFloat
    gap_error: NonNegativeFloat
    gradient_floor: NonNegativeFloat

    @property
    def certified_distance(self) -> float:
        return math.sqrt(self.gap + self.gap_error)

    @property
    def distance_estimate(self) -> float:
        return min(
            self.certified_distance, self.violation + self.kkt_residual / self.radius
        )


def feasible_recovery(
    lam: np.ndarray, x: np.ndarray, tau: float, active_set: ActiveSet
) -> FeasibleRecovery:
    eps = np.finfo(float).eps
    spread = active_set.indicator @ lam
    v = x / (1.0 + spread)
    energy = active_set.indicator.T @ (v * v)
    gradient = energy - tau * tau
    peak = math.sqrt(float(np.max(energy)))
    shrink = (peak - tau) / peak if peak > tau else 0.0

    covered = active_set.covered
    point = v.copy()
    point[covered] *= 1.0 - shrink

    # P(u) - D(lam) = ||u - x||^2 - ||v - x||^2 - sum_r lam_r (||v_r||^2 - tau^2)
    moved = shrink * (
        2.0 * float(np.sum(v * v * spread)) + shrink * float(np.sum(v[covered] ** 2))
    )
    slack = -float(lam @ gradient)
    magnitude = float(x @ x) + float(lam @ (energy + tau * tau))
    return FeasibleRecovery(
        point=point,
        gradient=gradient,
        radius=tau,
        kkt_residual=float(np.max(np.abs(lam - np.maximum(lam + gradient, 0.0)))),
        violation=max(peak - tau, 0.0),
        gap=max(moved + slack, 0.0),
        gap_error=GAP_ERROR_ULPS * eps * magnitude,
        gradient_floor=KKT_FLOOR_ULPS * eps * (tau * tau + peak * peak),
    )


class NewtonResult(ArrayModel):
    multipliers: np.ndarray
    point: np.ndarray
    iterations: NonNegativeInt
    kkt_residual: NonNegativeFloat
    violation: NonNegativeFloat
    duality_gap: NonNegativeFloat
    distance_estimate: NonNegativeFloat
    values: list[float]
    converged: bool


def kkt_tolerance(x: np.ndarray, tau: float, tol: float, floor: float) -> float:
    return max(tol * tol * tau / (1.0 + float(np.linalg.norm(x))), floor)


def feasibility_tolerance(tau: float, tol: float, floor: float) -> float:
    # a gradient entry g on a violated group means a violation of about g / (2 tau)
    return max(tol / 2, floor / tau)


def _solve_free_block(
    hessian: sp.csr_matrix, rhs: np.ndarray, iteration: int, lam: np.ndarray
) -> np.ndarray:
    """Solves (-H) d = rhs for the negative semidefinite block H."""
    n = rhs.size
    if n == 0:
        return rhs.copy()
    if n <= DENSE_LIMIT:
        system = -hessian.toarray()
        system[np.diag_indices(n)] += RIDGE * (1.0 + np.abs(np.diag(system)))
        try:
            factor = scipy.linalg.cho_factor(system, check_finite=False)
        except np.linalg.LinAlgError as e:
            raise NewtonFallback(
                f"reduced dual Hessian is not definite: {e}",
                iterations=iteration,
                residual=math.inf,
                best_estimate=lam,
            ) from e
        return scipy.linalg.cho_solve(factor, rhs, check_finite=False)

    system = (-hessian).tocsc()
    diagonal = system.diagonal()
    system = system + sp.diags(RIDGE * (1.0 + np.abs(diagonal)))
    try:
        return scipy.sparse.linalg.splu(system.tocsc()).solve(rhs)
    except RuntimeError as e:
        raise NewtonFallback(
            f"reduced dual Hessian is singular: {e}",
            iterations=iteration,
            residual=math.inf,
            best_estimate=lam,
        ) from e


def projected_newton(
    x: np.ndarray,
    tau: float,
    active_set: ActiveSet,
    lam_init: np.ndarray | None = None,
    eta: float = 0.5,
    delta: float = 0.1,
    epsilon: float = 0.1,
    tol: float = 1e-8,
    max_outer: int = 100,
) -> NewtonResult:
    """Maximizes the dual from `lam_init` (zeros by default).

    Stops once the duality gap certifies distance tol, or once the KKT
    residual is below tol^2 tau / (1 + ||x||) with violation at most tol/2.
    Both targets are floored at the rounding level of the gradient, and an
    Armijo search that fails at that level ends the run instead of signalling
    a fallback.
    """
    if not 0 < eta < 1:
        raise StructureError(f"eta must lie in (0, 1), got {eta}")
    if not 0 < delta < 0.5:
        raise StructureError(f"delta must lie in (0, 1/2), got {delta}")
    if not epsilon > 0 or not tol > 0 or not tau > 0:
        raise StructureError("epsilon, tol and tau must be positive")

    x = np.asarray(x, dtype=float)
    n_active = len(active_set)
    if n_active == 0:
        return NewtonResult(
            multipliers=np.zeros(0),
            point=x.copy(),
            iterations=0,
            kkt_residual=0.0,
            violation=0.0,
            duality_gap=0.0,
            distance_estimate=0.0,
            values=[],
            converged=True,
        )

    if lam_init is None:
        lam = np.zeros(n_active)
    else:
        lam = np.asarray(lam_init, dtype=float)
        if lam.shape != (n_active,) or np.any(lam < 0):
            raise StructureError(
                f"lam_init must be a nonnegative vector of length {n_active}"
            )
        lam = lam.copy()

    value = dual_value(lam, x, tau, active_set)
    values = [value]
    iteration = 0
    converged = True

    while True:
        recovery = feasible_recovery(lam, x, tau, active_set)
        grad = recovery.gradient
        residual = recovery.kkt_residual
        floor = recovery.gradient_floor
        certified = recovery.gap + recovery.gap_error <= tol * tol
        stationary = residual <= kkt_tolerance(
            x, tau, tol, floor
        ) and recovery.violation <= feasibility_tolerance(tau, tol, floor)
        if certified or stationary:
            break
        if iteration >= max_outer:
            raise ConvergenceError(
                "projected Newton reached its iteration budget",
                iterations=iteration,
                residual=residual,
                best_estimate=lam,
            )
        iteration += 1

        projected = lam - np.maximum(lam + grad, 0.0)
        eps_n = min(epsilon, float(np.linalg.norm(projected)))
        bound = (lam <= eps_n) & (grad < 0)
        free = ~bound

        hessian = dual_hessian(lam, x, tau, active_set)
        diagonal = hessian.diagonal()
        direction = np.zeros(n_active)
        direction[free] = _solve_free_block(
            hessian[free][:, free], grad[free], iteration, lam
        )
        curvature = -diagonal[bound]
        direction[bound] = grad[bound] / (curvature + RIDGE * (1.0 + curvature))
        decrement = float(grad[free] @ direction[free])

        alpha = 1.0
        accepted = False
        for _ in range(MAX_BACKTRACKS + 1):
            candidate = np.maximum(lam + alpha * direction, 0.0)
            if np.array_equal(candidate, lam):
                break
            increase = dual_increase(lam, candidate, x, tau, active_set)
            required = delta * (
                alpha * decrement + float(grad[bound] @ (candidate[bound] - lam[bound]))
            )
            if increase >= required:
                accepted = True
                break
            alpha *= eta

        if not accepted:
            if residual <= STALL_FACTOR * floor:
                logger.debug(
                    "newton step %d: no ascent left at residual %.3e; stopping",
                    iteration,
                    residual,
                )
                converged = False
                break
            raise NewtonFallback(
                "Armijo search exhausted its backtracks",
                iterations=iteration,
                residual=residual,
                best_estimate=lam,
            )

        lam = candidate
        value += increase
        values.append(value)
        logger.debug(
            "newton step %d: f=%.12e residual=%.3e free=%d alpha=%.3g",
            iteration,
            value,
            residual,
            int(free.sum()),
            alpha,
        )

    return NewtonResult(
        multipliers=lam,
        point=recovery.point,
        iterations=iteration,
        kkt_residual=residual,
        violation=recovery.violation,
        duality_gap=recovery.gap,
        distance_estimate=recovery.distance_estimate,
        values=values,
        converged=converged,
    )


class DualNewtonBackend(ProjectionBackend):
    name = BackendName.dual_newton

    def __init__(
        self,
        eta: float = 0.5,
        delta: float = 0.1,
        epsilon: float = 0.1,
        max_outer: int = 100,
        fallback: ProjectionBackend | None = None,
    ):
        self.eta = eta
        self.delta = delta
        self.epsilon = epsilon
        self.max_outer = max_outer
        self.fallback = fallback or CyclicBackend(max_iter=FALLBACK_MAX_ITER)

    def project(
        self,
        x: np.ndarray,
        radius: float,
        active_set: ActiveSet,
        q: float,
        tol: float,
        warm_start: np.ndarray | None = None,
    ) -> Projection:
        if q != 2.0:
            raise StructureError("the dual Newton projection only supports p = 2")
        lam_init = None
        if warm_start is not None:
            lam_init = np.maximum(np.asarray(warm_start)[active_set.members], 0.0)
        try:
            result = projected_newton(
                x,
                radius,
                active_set,
                lam_init=lam_init,
                eta=self.eta,
                delta=self.delta,
                epsilon=self.epsilon,
                tol=tol,
                max_outer=self.max_outer,
            )
        except ConvergenceError as e:
            logger.warning("dual Newton failed (%s); falling back to cyclic projections", e)
            return self._fall_back(x, radius, active_set, q, tol, e)

        return Projection(
            point=result.point,
            iterations=result.iterations,
            residual=result.distance_estimate,
            multipliers=result.multipliers,
            backend=self.name,
        )

    def _fall_back(
        self,
        x: np.ndarray,
        radius: float,
        active_set: ActiveSet,
        q: float,
        tol: float,
        failure: ConvergenceError,
    ) -> Projection:
        try:
            return self.fallback.project(x, radius, active_set, q, tol)
        except ConvergenceError as e:
            if failure.best_estimate is None:
                raise
            logger.warning(
                "cyclic fallback stopped short of tol=%.2e (%s); keeping the Newton iterate",
                tol,
                e,
            )
            recovery = feasible_recovery(failure.best_estimate, x, radius, active_set)
            return Projection(
                point=recovery.point,
                iterations=failure.iterations + e.iterations,
                residual=recovery.distance_estimate,
                multipliers=failure.best_estimate,
                backend=self.name,
            )
