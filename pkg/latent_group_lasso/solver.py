"""Inexact proximal gradient (ISTA / FISTA) for

    min_x (1/n) ||Psi x - y||^2 + 2 tau Omega(x)

Each prox of (tau/sigma) Omega is computed through an approximate projection
with tolerance eps0 * m^(-alpha) at outer iteration m. `solve_replicated` runs
the same loop over latent variables, where the prox is exact and group-wise.
"""

from __future__ import annotations

import enum
import logging
import math
import typing as t
import warnings

import numpy as np
from pydantic import (
    BaseModel,
    ConfigDict,
    Field,
    NonNegativeInt,
    PositiveFloat,
    PositiveInt,
    field_validator,
    model_validator,
)

from latent_group_lasso.base_models import (
    ArrayModel,
    BackendName,
    FrozenArrayModel,
    ProjectionBackend,
)
from latent_group_lasso.errors import ConvergenceError, StructureError
from latent_group_lasso.group_model import ExponentPair, GroupStructure
from latent_group_lasso.proj_cyclic import CyclicBackend
from latent_group_lasso.proj_dual_newton import DualNewtonBackend
from latent_group_lasso.prox_core import ProxResult, penalty_value, prox, prox_replicated
from latent_group_lasso.utils import as_vector, ensure_finite

logger = logging.getLogger(__name__)

SIGMA_MARGIN = 1.01
INNER_TOL_ULPS = 64


class Algorithm(str, enum.Enum):
    ista = "ista"
    fista = "fista"


class Problem(FrozenArrayModel):
    design: np.ndarray
    response: np.ndarray
    tau: PositiveFloat
    structure: GroupStructure
    p: ExponentPair = ExponentPair(p=2.0)

    @field_validator("p", mode="before")
    def coerce_exponent(cls, v):
        return v if isinstance(v, ExponentPair) else ExponentPair(p=float(v))

    @field_validator("design", "response", mode="before")
    def coerce_array(cls, v):
        arr = np.array(v, dtype=float)
        if not np.all(np.isfinite(arr)):
            raise ValueError("design and response must be finite")
        arr.setflags(write=False)
        return arr

    @model_validator(mode="after")
    def validate_dimensions(self):
        if self.design.ndim != 2:
            raise ValueError(f"design must be a matrix, got shape {self.design.shape}")
        n, d = self.design.shape
        if n < 1 or d < 1:
            raise ValueError("design needs at least one row and one column")
        if self.response.shape != (n,):
            raise ValueError(
                f"response must have length {n} to match the design, got shape {self.response.shape}"
            )
        if d != self.structure.d:
            raise ValueError(
                f"design has {d} columns but the group structure covers d={self.structure.d}"
            )
        return self

    @property
    def n(self) -> int:
        return self.design.shape[0]

    @property
    def d(self) -> int:
        return self.design.shape[1]

    def with_tau(self, tau: float) -> Problem:
        return Problem(
            design=self.design,
            response=self.response,
            tau=tau,
            structure=self.structure,
            p=self.p,
        )


class SolverConfig(BaseModel):
    algorithm: Algorithm = Algorithm.fista
    eps0: PositiveFloat = 1.0
    alpha: PositiveFloat | None = None
    outer_tol: PositiveFloat = 1e-6
    max_outer: PositiveInt = 10_000
    backend: BackendName | None = None
    sigma_override: PositiveFloat | None = None
    allow_weak_schedule: bool = False
    record_objective: bool = False
    newton_eta: float = Field(0.5, gt=0, lt=1)
    newton_delta: float = Field(0.1, gt=0, lt=0.5)
    newton_epsilon: PositiveFloat = 0.1

    model_config = ConfigDict(extra="forbid", frozen=True)

    @model_validator(mode="after")
    def validate_schedule(self):
        minimum = 4.0 if self.algorithm is Algorithm.fista else 2.0
        if self.schedule_exponent <= minimum:
            message = (
                f"tolerance exponent alpha={self.schedule_exponent} must exceed "
                f"{minimum:g} for {self.algorithm.value.upper()} to keep its rate"
            )
            if not self.allow_weak_schedule:
                raise ValueError(message)
            warnings.warn(message, UserWarning, stacklevel=2)
            logger.warning(message)
        return self

    @property
    def schedule_exponent(self) -> float:
        if self.alpha is not None:
            return self.alpha
        return 4.1 if self.algorithm is Algorithm.fista else 2.1

    def inner_tolerance(self, m: int) -> float:
        return self.eps0 * m ** (-self.schedule_exponent)

    def projection_backend(self, p: ExponentPair) -> ProjectionBackend:
        backend = self.backend
        if backend is None:
            backend = BackendName.dual_newton if p.q == 2.0 else BackendName.cyclic
        if backend is BackendName.cyclic:
            return CyclicBackend()
        if backend is BackendName.dual_newton:
            if p.q != 2.0:
                raise StructureError("the dual_newton backend only supports p = 2")
            return DualNewtonBackend(
                eta=self.newton_eta, delta=self.newton_delta, epsilon=self.newton_epsilon
            )
        raise StructureError(
            "the exact_groupwise backend only applies to solve_replicated"
        )


class IterationRecord(BaseModel):
    iteration: PositiveInt
    active_groups: NonNegativeInt
    inner_iterations: NonNegativeInt
    inner_tolerance: float
    inner_residual: float
    displacement: float
    objective: float | None = None


class SolverState(ArrayModel):
    """Iterate x^m, extrapolation point h^m and momentum s_m after step m."""

    x: np.ndarray
    h: np.ndarray
    s: float = 1.0
    iteration: NonNegativeInt = 0
    average: np.ndarray | None = None
    last_prox: ProxResult | None = None


class SolveResult(ArrayModel):
    x: np.ndarray
    iterations: NonNegativeInt
    converged: bool
    sigma: PositiveFloat
    objective: float
    history: list[IterationRecord]
    selected_groups: list[int]
    multipliers: np.ndarray | None = None
    averaged: np.ndarray | None = None
    latent: np.ndarray | None = None


def lipschitz_sigma(
    design: np.ndarray,
    n: int | None = None,
    rtol: float = 1e-6,
    max_iter: int = 10_000,
    seed: int = 0,
) -> float:
    """||Psi^T Psi|| / n by power iteration, inflated by a 1% margin."""
    design = np.asarray(design, dtype=float)
    n = n or design.shape[0]
    if not np.any(design):
        raise StructureError("the design operator is zero; no step size exists")
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(design.shape[1])
    v /= np.linalg.norm(v)
    estimate = 0.0
    for _ in range(max_iter):
        image = design @ v
        rayleigh = float(image @ image)
        w = design.T @ image
        norm = float(np.linalg.norm(w))
        if norm == 0.0:
            # start vector in the kernel
            v = rng.standard_normal(design.shape[1])
            v /= np.linalg.norm(v)
            continue
        v = w / norm
        if abs(rayleigh - estimate) <= rtol * rayleigh:
            estimate = rayleigh
            break
        estimate = rayleigh
    return estimate / n * SIGMA_MARGIN


def gradient_step(h: np.ndarray, problem: Problem, sigma: float) -> np.ndarray:
    if not sigma > 0:
        raise StructureError(f"sigma must be positive, got {sigma}")
    return _descend(problem.design, problem.response, h, sigma)


def _descend(
    design: np.ndarray, response: np.ndarray, h: np.ndarray, sigma: float
) -> np.ndarray:
    residual = design @ h - response
    return h - (design.T @ residual) / (design.shape[0] * sigma)


def data_fit(problem: Problem, x: np.ndarray) -> float:
    residual = problem.design @ x - problem.response
    return float(residual @ residual) / problem.n


def objective(problem: Problem, x: np.ndarray, penalty: float | None = None) -> float:
    """(1/n)||Psi x - y||^2 + 2 tau Omega(x); Omega is evaluated when not given."""
    x = as_vector(x, problem.d, "x")
    if penalty is None:
        penalty = penalty_value(x, problem.structure, problem.p)
    return data_fit(problem, x) + 2.0 * problem.tau * penalty


class _ProxStep(t.Protocol):
    def __call__(
        self, point: np.ndarray, tol: float, state: SolverState
    ) -> tuple[np.ndarray, ProxResult | None, IterationRecord]: ...


def _proximal_gradient(
    x0: np.ndarray,
    gradient: t.Callable[[np.ndarray], np.ndarray],
    prox_step: _ProxStep,
    config: SolverConfig,
    callback: t.Callable[[SolverState], None] | None,
) -> tuple[SolverState, list[IterationRecord], bool]:
    state = SolverState(x=x0.copy(), h=x0.copy())
    if config.algorithm is Algorithm.ista:
        state.average = np.zeros_like(x0)
    history: list[IterationRecord] = []
    converged = False

    for m in range(1, config.max_outer + 1):
        point = ensure_finite(gradient(state.h), "gradient step", m)
        tol = max(
            config.inner_tolerance(m),
            INNER_TOL_ULPS * np.finfo(float).eps * max(1.0, float(np.linalg.norm(point))),
        )
        try:
            x, last_prox, record = prox_step(point, tol, state)
        except ConvergenceError as e:
            raise ConvergenceError(
                f"inner projection failed at outer iteration {m}: {e}",
                iterations=m,
                residual=e.residual,
                best_estimate=state.x,
            ) from e
        ensure_finite(x, "proximal step", m)

        previous = state.x
        displacement = float(np.linalg.norm(x - previous)) / max(
            float(np.linalg.norm(previous)), 1.0
        )
        if config.algorithm is Algorithm.fista:
            s_next = (1.0 + math.sqrt(1.0 + 4.0 * state.s * state.s)) / 2.0
            state.h = x + ((state.s - 1.0) / s_next) * (x - previous)
            state.s = s_next
        else:
            state.h = x
            state.average += (x - state.average) / m
        state.x = x
        state.iteration = m
        state.last_prox = last_prox

        record = record.model_copy(update={"iteration": m, "displacement": displacement})
        history.append(record)
        logger.debug(
            "outer %d: active=%d inner=%d tol=%.2e displacement=%.3e",
            m,
            record.active_groups,
            record.inner_iterations,
            tol,
            displacement,
        )
        if callback is not None:
            callback(state)
        if m >= 2 and displacement <= config.outer_tol:
            converged = True
            break

    if not converged:
        logger.info(
            "stopped after max_outer=%d iterations without meeting outer_tol", config.max_outer
        )
    return state, history, converged


def solve(
    problem: Problem,
    config: SolverConfig | None = None,
    x0: np.ndarray | None = None,
    warm_multipliers: np.ndarray | None = None,
    callback: t.Callable[[SolverState], None] | None = None,
) -> SolveResult:
    """Projection-mode solve; `warm_multipliers` seeds the dual-Newton backend."""
    config = config or SolverConfig()
    gs = problem.structure
    x0 = np.zeros(problem.d) if x0 is None else ensure_finite(
        as_vector(x0, problem.d, "x0").copy(), "initial point", 0
    )
    sigma = config.sigma_override or lipschitz_sigma(problem.design)
    backend = config.projection_backend(problem.p)
    level = problem.tau / sigma
    multipliers = None if warm_multipliers is None else np.asarray(warm_multipliers, dtype=float)

    def prox_step(point, tol, state):
        nonlocal multipliers
        result = prox(point, level, gs, problem.p, backend=backend, tol=tol, warm_start=multipliers)
        multipliers = result.multipliers
        value = None
        if config.record_objective:
            value = data_fit(problem, result.prox_point) + 2.0 * problem.tau * result.penalty
        record = IterationRecord(
            iteration=state.iteration + 1,
            active_groups=len(result.active_set),
            inner_iterations=result.backend_iterations,
            inner_tolerance=tol,
            inner_residual=result.achieved_tolerance_estimate,
            displacement=0.0,
            objective=value,
        )
        return result.prox_point, result, record

    state, history, converged = _proximal_gradient(
        x0, lambda h: gradient_step(h, problem, sigma), prox_step, config, callback
    )
    last = state.last_prox
    return SolveResult(
        x=state.x,
        iterations=state.iteration,
        converged=converged,
        sigma=sigma,
        objective=data_fit(problem, state.x) + 2.0 * problem.tau * last.penalty,
        history=history,
        selected_groups=[int(r) for r in last.active_set.members],
        multipliers=multipliers,
        averaged=state.average,
    )


def latent_design(problem: Problem) -> np.ndarray:
    """Psi composed with the adjoint sum: the n x d~ design over latent slots."""
    return problem.design[:, problem.structure.latent_index]


def latent_objective(problem: Problem, v: np.ndarray) -> float:
    gs = problem.structure
    residual = latent_design(problem) @ v - problem.response
    penalty = float(np.sum(gs.block_norms(v, problem.p.p)))
    return float(residual @ residual) / problem.n + 2.0 * problem.tau * penalty


def solve_replicated(
    problem: Problem,
    config: SolverConfig | None = None,
    v0: np.ndarray | None = None,
    callback: t.Callable[[SolverState], None] | None = None,
) -> SolveResult:
    """Replication-mode solve: a non-overlapping group lasso in d~ latent variables.

    The configured projection backend is not used; the group-wise prox is exact.
    """
    config = config or SolverConfig()
    gs = problem.structure
    if not problem.p.has_closed_form_projector:
        raise StructureError(
            f"replicated solves need p = 2 or p = inf, got p = {problem.p.p}"
        )
    design = latent_design(problem)
    v0 = np.zeros(gs.replicated_dim) if v0 is None else ensure_finite(
        as_vector(v0, gs.replicated_dim, "v0").copy(), "initial point", 0
    )
    sigma = config.sigma_override or lipschitz_sigma(design, n=problem.n)
    level = problem.tau / sigma
    def prox_step(point, tol, state):
        v = prox_replicated(point, level, gs, problem.p)
        record = IterationRecord(
            iteration=state.iteration + 1,
            active_groups=int(np.count_nonzero(gs.block_norms(v, 2.0))),
            inner_iterations=0,
            inner_tolerance=0.0,
            inner_residual=0.0,
            displacement=0.0,
            objective=latent_objective(problem, v) if config.record_objective else None,
        )
        return v, None, record

    state, history, converged = _proximal_gradient(
        v0, lambda h: _descend(design, problem.response, h, sigma), prox_step, config, callback
    )
    v = state.x
    return SolveResult(
        x=gs.adjoint_sum(v),
        iterations=state.iteration,
        converged=converged,
        sigma=sigma,
        objective=latent_objective(problem, v),
        history=history,
        selected_groups=[int(r) for r in np.flatnonzero(gs.block_norms(v, 2.0))],
        averaged=None if state.average is None else gs.adjoint_sum(state.average),
        latent=v,
    )

