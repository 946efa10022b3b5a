"""Projection onto an intersection of group cylinders by anchored cyclic
projections, and the closed-form per-set projections for q=2 and q=1."""

from __future__ import annotations

import logging
import math
import typing as t

import numpy as np
from pydantic import NonNegativeInt
from scipy.sparse.csgraph import connected_components

from latent_group_lasso.base_models import (
    ArrayModel,
    BackendName,
    Projection,
    ProjectionBackend,
)
from latent_group_lasso.errors import ConvergenceError, StructureError
from latent_group_lasso.group_model import ActiveSet, vector_norm

logger = logging.getLogger(__name__)

BallProjector = t.Callable[[np.ndarray, float], np.ndarray]

MAX_ITER_CAP = 1_000_000


def project_l2_ball(w: np.ndarray, tau: float) -> np.ndarray:
    norm = float(np.linalg.norm(w))
    if norm <= tau:
        return np.array(w, dtype=float)
    return w * (tau / norm)


def project_l1_ball(w: np.ndarray, tau: float) -> np.ndarray:
    """Soft-threshold w at the level mu that puts it on the l1 sphere of radius tau.

    mu comes from the sorted-prefix search: the first k with
    sum_{j<k}(w*_j - w*_k) <= tau <= sum_{j<=k}(w*_j - w*_{k+1}), w*_{g+1} = 0.
    """
    if not tau > 0:
        raise StructureError(f"ball radius must be positive, got {tau}")
    w = np.asarray(w, dtype=float)
    magnitudes = np.abs(w)
    if magnitudes.sum() <= tau:
        return w.copy()

    ordered = np.sort(magnitudes)[::-1]
    prefix = np.cumsum(ordered)
    ranks = np.arange(1, ordered.size + 1)
    following = np.append(ordered[1:], 0.0)
    upper = prefix - ranks * following
    # upper is nondecreasing and upper[k-1] is the lower bracket of k, so the
    # first k reaching tau also satisfies the lower bracket
    k = int(np.argmax(upper >= tau))
    lower = prefix[k] - (k + 1) * ordered[k]
    mu = ordered[k] + (lower - tau) / (k + 1)
    return np.sign(w) * np.maximum(magnitudes - mu, 0.0)


def project_cylinder_p2(w: np.ndarray, group: t.Sequence[int], tau: float) -> np.ndarray:
    out = np.array(w, dtype=float)
    out[group] = project_l2_ball(out[group], tau)
    return out


def project_cylinder_inf(w: np.ndarray, group: t.Sequence[int], tau: float) -> np.ndarray:
    out = np.array(w, dtype=float)
    out[group] = project_l1_ball(out[group], tau)
    return out


BALL_PROJECTORS: dict[float, BallProjector] = {
    2.0: project_l2_ball,
    1.0: project_l1_ball,
}


def ball_projector_for(q: float) -> BallProjector:
    try:
        return BALL_PROJECTORS[float(q)]
    except KeyError:
        raise StructureError(
            f"No closed-form projector onto the l{q} ball; pass per_set_projector"
        ) from None


def default_max_iter(n_sets: int, tol: float) -> int:
    return int(min(100 * n_sets * math.ceil(1.0 / tol), MAX_ITER_CAP))


class CyclicState(ArrayModel):
    iterate: np.ndarray
    anchor: np.ndarray
    cycle_position: NonNegativeInt
    iteration: NonNegativeInt


def _anchored_steps(
    x: np.ndarray,
    sets: list[np.ndarray],
    radius: float,
    project_ball: BallProjector,
) -> t.Iterator[tuple[int, np.ndarray]]:
    """Yields (n, w^n) with w^n = x/(n+1) + n/(n+1) * pi_n(w^{n-1}).

    The yielded array is updated in place by the next step.
    """
    w = x.copy()
    n_sets = len(sets)
    n = 0
    while True:
        group = sets[n % n_sets]
        n += 1
        w[group] = project_ball(w[group], radius)
        w *= n / (n + 1)
        w += x / (n + 1)
        yield n, w


def _max_violation(w: np.ndarray, sets: list[np.ndarray], radius: float, q: float) -> float:
    return max(max(vector_norm(w[g], q) - radius, 0.0) for g in sets)


def _localize(sets: t.Sequence[t.Sequence[int]]) -> tuple[np.ndarray, list[np.ndarray]]:
    coords = np.unique(np.concatenate([np.asarray(g, dtype=np.intp) for g in sets]))
    return coords, [np.searchsorted(coords, np.asarray(g, dtype=np.intp)) for g in sets]


def cyclic_states(
    x: np.ndarray,
    sets: t.Sequence[t.Sequence[int]],
    radius: float,
    per_set_projector: BallProjector = project_l2_ball,
) -> t.Iterator[CyclicState]:
    """Snapshots of the anchored cyclic iteration over the full vector."""
    x = np.asarray(x, dtype=float)
    coords, local_sets = _localize(sets)
    for n, w in _anchored_steps(x[coords], local_sets, radius, per_set_projector):
        iterate = x.copy()
        iterate[coords] = w
        yield CyclicState(
            iterate=iterate,
            anchor=x,
            cycle_position=(n - 1) % len(local_sets),
            iteration=n,
        )


def _cycle_end_candidates(
    history: list[tuple[int, np.ndarray]], n_sets: int
) -> dict[str, np.ndarray]:
    """Limits of the cycle-end iterates under m w^n = m pi + a + b log m, m = n + 1.

    `history` holds up to three pairs (m, m * w^n) taken one cycle apart.
    """
    (m1, s1), (m2, s2) = history[-2:]
    candidates = {"two-point": (s2 - s1) / n_sets}
    if len(history) == 3:
        m0, s0 = history[0]
        l0, l1, l2 = math.log(m0), math.log(m1), math.log(m2)
        drift = ((s2 - s1) - (s1 - s0)) / ((l2 - l1) - (l1 - l0))
        candidates["log"] = ((s2 - s1) - drift * (l2 - l1)) / n_sets
    return candidates


def cyclic_project(
    x: np.ndarray,
    sets: t.Sequence[t.Sequence[int]],
    radius: float,
    per_set_projector: BallProjector = project_l2_ball,
    tol: float = 1e-6,
    max_iter: int | None = None,
    q: float | None = None,
) -> Projection:
    """Anchored cyclic projections onto the intersection of radius-scaled cylinders.

    At the end of every cycle the iterate competes with two extrapolations of
    the cycle-end sequence. Each candidate's distance estimate is n/B times
    its change over the last cycle; the run stops once the best candidate has
    estimate and constraint violation both at most tol/2.
    """
    if len(sets) == 0:
        raise StructureError("cyclic_project needs at least one set")
    if not tol > 0:
        raise StructureError(f"tolerance must be positive, got {tol}")
    if q is None:
        q = 1.0 if per_set_projector is project_l1_ball else 2.0
    x = np.asarray(x, dtype=float)
    n_sets = len(sets)
    max_iter = max_iter or default_max_iter(n_sets, tol)
    coords, local_sets = _localize(sets)

    history = [(1, x[coords].copy())]
    extrapolated: dict[str, np.ndarray] = {}
    best, score = x[coords].copy(), math.inf
    for n, w in _anchored_steps(x[coords], local_sets, radius, per_set_projector):
        if n % n_sets == 0:
            m_prev, s_prev = history[-1]
            scale = n / n_sets
            change = float(np.linalg.norm(w - s_prev / m_prev))
            history = [*history[-2:], (n + 1, (n + 1) * w)]

            candidates = [("iterate", w, scale * change)]
            for kind, point in _cycle_end_candidates(history, n_sets).items():
                if kind in extrapolated:
                    moved = scale * float(np.linalg.norm(point - extrapolated[kind]))
                else:
                    moved = scale * change
                extrapolated[kind] = point
                candidates.append((kind, point, moved))

            scores = [
                max(estimate, _max_violation(point, local_sets, radius, q))
                for _, point, estimate in candidates
            ]
            k = int(np.argmin(scores))
            if scores[k] < score:
                best, score = candidates[k][1].copy(), scores[k]
            if scores[k] <= tol / 2:
                logger.debug("cyclic projection: %s accepted after %d steps", candidates[k][0], n)
                break
        if n >= max_iter:
            point = x.copy()
            point[coords] = best
            raise ConvergenceError(
                "cyclic projections did not reach the requested tolerance",
                iterations=n,
                residual=score,
                best_estimate=point,
            )

    point = x.copy()
    point[coords] = candidates[k][1]
    return Projection(
        point=point,
        iterations=n,
        residual=scores[k],
        backend=BackendName.cyclic,
    )


class CyclicBackend(ProjectionBackend):
    """Cyclic projections run independently on every connected component of
    the active overlap graph; single-group components are exact."""

    name = BackendName.cyclic

    def __init__(
        self,
        per_set_projector: BallProjector | None = None,
        max_iter: int | None = None,
    ):
        self.per_set_projector = per_set_projector
        self.max_iter = max_iter

    def project(
        self,
        x: np.ndarray,
        radius: float,
        active_set: ActiveSet,
        q: float,
        tol: float,
        warm_start: np.ndarray | None = None,
    ) -> Projection:
        project_ball = self.per_set_projector or ball_projector_for(q)
        point = np.array(x, dtype=float)
        if active_set.is_empty:
            return Projection(
                point=point, iterations=0, residual=0.0, backend=self.name
            )

        n_components, labels = connected_components(
            active_set.overlap_graph, directed=False
        )
        groups = active_set.groups
        components = [np.flatnonzero(labels == c) for c in range(n_components)]
        iterative = [c for c in components if c.size > 1]
        component_tol = tol / math.sqrt(max(len(iterative), 1))

        iterations = 0
        residual_sq = 0.0
        for component in components:
            if component.size == 1:
                g = groups[component[0]]
                point[g] = project_ball(point[g], radius)
                iterations += 1
                continue
            result = cyclic_project(
                x,
                [groups[k] for k in component],
                radius,
                per_set_projector=project_ball,
                tol=component_tol,
                max_iter=self.max_iter,
                q=q,
            )
            coords = np.unique(np.concatenate([groups[k] for k in component]))
            point[coords] = result.point[coords]
            iterations += result.iterations
            residual_sq += result.residual**2

        logger.debug(
            "cyclic projection: %d groups, %d components (%d iterative), %d steps",
            len(active_set),
            n_components,
            len(iterative),
            iterations,
        )
        return Projection(
            point=point,
            iterations=iterations,
            residual=math.sqrt(residual_sq),
            backend=self.name,
        )
