from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from latent_group_lasso import GroupStructure


@dataclass
class GroupTestCase:
    name: str
    definition: dict

    def __str__(self) -> str:
        return self.name


@dataclass
class ProxTestCase:
    name: str
    x: list[float]
    groups: list[list[int]]
    lam: float
    p: float = 2.0
    expected: list[float] | None = None

    def __str__(self) -> str:
        return self.name

    @property
    def structure(self) -> GroupStructure:
        return GroupStructure.from_json({"d": len(self.x), "groups": self.groups})

    @property
    def vector(self) -> np.ndarray:
        return np.array(self.x, dtype=float)


@dataclass
class CliTestCase:
    name: str
    argv: list[str]
    exit_code: int
    files: dict[str, str] = field(default_factory=dict)

    def __str__(self) -> str:
        return self.name


def random_structure(
    rng: np.random.Generator, d: int, n_groups: int, max_size: int | None = None
) -> GroupStructure:
    """Random overlapping groups; a shuffled partition first keeps every coordinate covered."""
    max_size = max_size or d
    order = rng.permutation(d)
    cuts = np.sort(rng.choice(np.arange(1, d), size=min(n_groups, d) - 1, replace=False))
    groups = [list(chunk) for chunk in np.split(order, cuts)]
    while len(groups) < n_groups:
        size = int(rng.integers(1, max_size + 1))
        groups.append(list(rng.choice(d, size, replace=False)))
    for g in groups[: n_groups // 2]:
        extra = int(rng.integers(0, d))
        if extra not in g and len(g) < max_size:
            g.append(extra)
    return GroupStructure(d=d, groups=[[int(j) for j in g] for g in groups])


def l1_ball_oracle(w: np.ndarray, tau: float, iterations: int = 200) -> np.ndarray:
    """Projection onto the l1 ball by bisection on the soft-threshold level."""
    magnitudes = np.abs(w)
    if magnitudes.sum() <= tau:
        return w.copy()
    low, high = 0.0, float(magnitudes.max())
    for _ in range(iterations):
        mid = (low + high) / 2
        if np.maximum(magnitudes - mid, 0.0).sum() > tau:
            low = mid
        else:
            high = mid
    return np.sign(w) * np.maximum(magnitudes - (low + high) / 2, 0.0)


def _clarabel_solve(problem) -> None:
    import cvxpy as cp

    problem.solve(
        solver=cp.CLARABEL,
        tol_gap_abs=1e-12,
        tol_gap_rel=1e-12,
        tol_feas=1e-12,
        max_iter=500,
    )


def latent_prox_oracle(x: np.ndarray, lam: float, gs: GroupStructure, p: float = 2.0) -> np.ndarray:
    """argmin_w (1/2 lam)||w - x||^2 + Omega(w), with Omega written through its
    latent decomposition w = sum_r v_r, supp(v_r) in G_r."""
    import cvxpy as cp

    norm_order = "inf" if math.isinf(p) else p
    latent = [cp.Variable(len(g)) for g in gs.groups]
    w = sum(
        np.eye(gs.d)[:, list(g)] @ v for g, v in zip(gs.groups, latent)
    )
    objective = cp.sum_squares(w - x) / (2 * lam) + sum(cp.norm(v, norm_order) for v in latent)
    problem = cp.Problem(cp.Minimize(objective))
    _clarabel_solve(problem)
    return np.asarray(w.value, dtype=float)


def projection_oracle(x: np.ndarray, radius: float, gs: GroupStructure, q: float = 2.0) -> np.ndarray:
    """Euclidean projection of x onto {u : ||u_G||_q <= radius for every group}."""
    import cvxpy as cp

    u = cp.Variable(gs.d)
    constraints = [cp.norm(u[list(g)], q) <= radius for g in gs.groups]
    problem = cp.Problem(cp.Minimize(cp.sum_squares(u - x)), constraints)
    _clarabel_solve(problem)
    return np.asarray(u.value, dtype=float)


def least_squares_problem(
    rng: np.random.Generator, n: int, gs: GroupStructure, relevant: int = 3, noise: float = 0.1
) -> tuple[np.ndarray, np.ndarray]:
    design = rng.standard_normal((n, gs.d))
    weights = np.zeros(gs.d)
    weights[:relevant] = rng.uniform(1.0, 2.0, relevant)
    response = design @ weights + noise * rng.standard_normal(n)
    return design, response


def loglog_slope(iterations: np.ndarray, gaps: np.ndarray) -> float:
    keep = gaps > 0
    return float(np.polyfit(np.log(iterations[keep]), np.log(gaps[keep]), 1)[0])
