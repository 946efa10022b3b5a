import math

import numpy as np
import pytest

from latent_group_lasso import (
    ConvergenceError,
    GroupStructure,
    GroupValidationError,
    NumericalError,
    Problem,
    SolverConfig,
    StructureError,
    lipschitz_sigma,
    penalty_value,
    solve,
    solve_replicated,
    tau_max,
)
from latent_group_lasso.group_model import groups_in_support, variable_support
from latent_group_lasso.solver import Algorithm, gradient_step, objective

from .common import least_squares_problem, loglog_slope, random_structure

CHAIN6 = GroupStructure.from_json({"d": 6, "groups": [[1, 2, 3, 4], [3, 4, 5, 6]]})
TIGHT = SolverConfig(outer_tol=1e-10, max_outer=20_000)


def small_problem(
    seed: int = 0,
    tau_fraction: float = 0.3,
    gs: GroupStructure = CHAIN6,
    n: int = 20,
    p: float = 2.0,
) -> Problem:
    rng = np.random.default_rng(seed)
    design, response = least_squares_problem(rng, n, gs)
    problem = Problem(design=design, response=response, tau=1.0, structure=gs, p=p)
    return problem.with_tau(tau_fraction * tau_max(problem))


@pytest.mark.parametrize(
    "design, expected",
    [
        (np.eye(5), 1.01 / 5),
        (np.array([[3.0]]), 9 * 1.01),
    ],
    ids=["identity", "scalar"],
)
def test_lipschitz_sigma(design, expected):
    assert lipschitz_sigma(design) == pytest.approx(expected, rel=1e-6)


def test_lipschitz_sigma_matches_dense_eigensolver():
    design = np.random.default_rng(0).standard_normal((20, 50))
    expected = np.linalg.eigvalsh(design.T @ design).max() / 20 * 1.01
    assert lipschitz_sigma(design, rtol=1e-10) == pytest.approx(expected, rel=1e-5)


def test_lipschitz_sigma_rejects_zero_operator():
    with pytest.raises(StructureError):
        lipschitz_sigma(np.zeros((3, 2)))


def test_gradient_step_at_zero_residual_leaves_point_unchanged():
    gs = GroupStructure(d=2, groups=[[0, 1]])
    design = np.array([[1.0, 2.0], [0.0, 1.0], [1.0, 1.0]])
    h = np.array([0.5, -1.0])
    problem = Problem(design=design, response=design @ h, tau=1.0, structure=gs)
    np.testing.assert_allclose(gradient_step(h, problem, 2.0), h)


def test_gradient_step_scalar():
    gs = GroupStructure(d=1, groups=[[0]])
    problem = Problem(design=[[1.0]], response=[0.0], tau=1.0, structure=gs)
    np.testing.assert_allclose(gradient_step(np.ones(1), problem, 1.01), [1 - 1 / 1.01])


def test_gradient_step_matches_finite_difference_gradient():
    problem = small_problem(seed=3)
    rng = np.random.default_rng(3)
    h = rng.standard_normal(problem.d)
    sigma = 1.7

    def loss(z):
        r = problem.design @ z - problem.response
        return r @ r / problem.n

    step = 1e-6
    numeric = np.array(
        [(loss(h + step * e) - loss(h - step * e)) / (2 * step) for e in np.eye(problem.d)]
    )
    analytic = (h - gradient_step(h, problem, sigma)) * 2 * sigma
    np.testing.assert_allclose(analytic, numeric, rtol=1e-5, atol=1e-7)


def test_default_schedule_exponents():
    assert SolverConfig().schedule_exponent == 4.1
    assert SolverConfig(algorithm="ista").schedule_exponent == 2.1
    assert SolverConfig(eps0=2.0, alpha=5.0).inner_tolerance(2) == pytest.approx(2.0 / 32)


@pytest.mark.parametrize(
    "values",
    [
        {"alpha": 3.0},
        {"algorithm": "ista", "alpha": 2.0},
        {"eps0": 0.0},
        {"outer_tol": -1.0},
        {"newton_delta": 0.5},
        {"backend": "newton"},
        {"unexpected": True},
    ],
    ids=["weak FISTA schedule", "weak ISTA schedule", "eps0", "outer_tol", "delta", "backend", "unknown field"],
)
def test_invalid_configurations(values):
    with pytest.raises(GroupValidationError):
        SolverConfig(**values)


def test_weak_schedule_escape_hatch_warns():
    with pytest.warns(UserWarning, match="alpha=3"):
        config = SolverConfig(alpha=3.0, allow_weak_schedule=True)
    assert config.schedule_exponent == 3.0


def test_dual_newton_needs_p_two():
    with pytest.raises(StructureError):
        solve(small_problem(p=math.inf), SolverConfig(backend="dual_newton"))


def test_config_is_frozen():
    config = SolverConfig()
    with pytest.raises(GroupValidationError):
        config.outer_tol = 1e-3


ONE_GROUP = GroupStructure(d=2, groups=[[0, 1]])

invalid_problem_cases = [
    {"design": np.ones((3, 2)), "response": np.ones(4), "structure": ONE_GROUP},
    {"design": np.ones((3, 3)), "response": np.ones(3), "structure": ONE_GROUP},
    {"design": [[np.nan]], "response": [1.0], "structure": GroupStructure(d=1, groups=[[0]])},
]


@pytest.mark.parametrize(
    "values",
    invalid_problem_cases,
    ids=["response length", "design width", "non-finite design"],
)
def test_invalid_problems(values):
    with pytest.raises(GroupValidationError):
        Problem(tau=1.0, **values)


def test_problem_exponent_coercion():
    problem = Problem(design=[[1.0]], response=[1.0], tau=1.0, structure=GroupStructure(d=1, groups=[[0]]), p="inf")
    assert problem.p.q == 1.0


def test_zero_is_optimal_beyond_tau_max():
    problem = small_problem()
    result = solve(problem.with_tau(1.01 * tau_max(problem)))
    np.testing.assert_array_equal(result.x, np.zeros(problem.d))
    assert result.converged
    assert result.selected_groups == []


def test_identity_design_gives_group_soft_threshold():
    gs = GroupStructure(d=3, groups=[[0, 1, 2]])
    y = np.array([3.0, 4.0, 12.0])
    problem = Problem(design=np.eye(3), response=y, tau=1.0, structure=gs)
    result = solve(problem, TIGHT)
    # threshold n * tau on ||y|| = 13
    np.testing.assert_allclose(result.x, y * (1 - 3.0 / 13.0), atol=1e-7)


@pytest.mark.parametrize("algorithm", ["fista", "ista"])
def test_projection_and_replication_agree_on_toy(algorithm):
    problem = small_problem(seed=1)
    config = SolverConfig(algorithm=algorithm, outer_tol=1e-11, max_outer=50_000)
    projected = solve(problem, config)
    replicated = solve_replicated(problem, config)

    assert projected.objective == pytest.approx(replicated.objective, rel=1e-6)
    assert objective(problem, projected.x) == pytest.approx(projected.objective, rel=1e-5)


def test_formulations_agree_on_random_instances():
    rng = np.random.default_rng(17)
    for _ in range(20):
        d = int(rng.integers(5, 51))
        n_groups = max(2, int(d * rng.uniform(1.0, 2.0) / 5))
        gs = random_structure(rng, d, n_groups, max_size=8)
        design, response = least_squares_problem(rng, 100, gs, relevant=min(5, d))
        problem = Problem(design=design, response=response, tau=1.0, structure=gs)
        problem = problem.with_tau(0.2 * tau_max(problem))

        config = SolverConfig(outer_tol=1e-10, max_outer=50_000)
        projected = solve(problem, config)
        replicated = solve_replicated(problem, config)

        assert projected.objective == pytest.approx(replicated.objective, rel=1e-6)
        threshold = 1e-5
        np.testing.assert_array_equal(
            variable_support(np.where(np.abs(projected.x) > threshold, projected.x, 0.0)),
            variable_support(np.where(np.abs(replicated.x) > threshold, replicated.x, 0.0)),
        )


def test_support_is_a_union_of_groups():
    problem = small_problem(seed=2, tau_fraction=0.5)
    result = solve(problem, TIGHT)
    support = set(variable_support(np.where(np.abs(result.x) > 1e-9, result.x, 0.0)).tolist())
    covered = set()
    for r in groups_in_support(result.x, problem.structure, atol=1e-9):
        covered.update(problem.structure.groups[r])
    assert support == covered


def test_ista_objective_decreases_monotonically():
    problem = small_problem(seed=4)
    config = SolverConfig(algorithm=Algorithm.ista, eps0=1e-6, record_objective=True, max_outer=100, outer_tol=1e-12)
    values = [record.objective for record in solve(problem, config).history]
    assert all(b <= a * (1 + 1e-7) for a, b in zip(values, values[1:]))


def test_warm_start_from_the_solution_needs_fewer_iterations():
    problem = small_problem(seed=5)
    first = solve(problem, TIGHT)
    second = solve(problem, TIGHT, x0=first.x, warm_multipliers=first.multipliers)
    assert second.iterations < first.iterations
    np.testing.assert_allclose(second.x, first.x, atol=1e-6)


def test_callback_sees_every_state():
    seen = []
    problem = small_problem(seed=6)
    result = solve(problem, SolverConfig(algorithm="ista", max_outer=5, outer_tol=1e-14), callback=lambda s: seen.append((s.iteration, s.average.copy())))
    assert [m for m, _ in seen] == [1, 2, 3, 4, 5]
    np.testing.assert_allclose(seen[-1][1], result.averaged)


def test_non_finite_gradient_names_the_iteration():
    gs = GroupStructure(d=2, groups=[[0, 1]])
    problem = Problem(design=np.eye(2), response=np.array([1e6, 1e6]), tau=1.0, structure=gs)
    with pytest.raises(NumericalError, match="iteration 1"):
        solve(problem, SolverConfig(sigma_override=1e-305))


def test_backend_failure_carries_outer_iteration(monkeypatch):
    def failing_prox(*args, **kwargs):
        raise ConvergenceError("inner failure", iterations=7, residual=0.5)

    monkeypatch.setattr("latent_group_lasso.solver.prox", failing_prox)
    with pytest.raises(ConvergenceError, match="outer iteration 1") as ce:
        solve(small_problem())
    assert ce.value.residual == 0.5


def test_replicated_solve_with_zero_response():
    gs = CHAIN6
    design = np.random.default_rng(0).standard_normal((10, 6))
    problem = Problem(design=design, response=np.zeros(10), tau=0.1, structure=gs)
    result = solve_replicated(problem)
    np.testing.assert_array_equal(result.latent, np.zeros(gs.replicated_dim))
    np.testing.assert_array_equal(result.x, np.zeros(6))


def test_replicated_matches_projection_on_disjoint_groups():
    gs = GroupStructure.from_json({"d": 6, "groups": [[1, 2], [3, 4], [5, 6]]})
    problem = small_problem(seed=9, gs=gs)
    np.testing.assert_allclose(solve(problem, TIGHT).x, solve_replicated(problem, TIGHT).x, atol=1e-6)


def test_replicated_needs_closed_form_exponent():
    with pytest.raises(StructureError):
        solve_replicated(small_problem(p=3.0))


def test_cyclic_backend_solves_p_inf_on_disjoint_groups():
    gs = GroupStructure.from_json({"d": 6, "groups": [[1, 2, 3], [4, 5], [6]]})
    problem = small_problem(seed=10, gs=gs, p=math.inf)
    projected = solve(problem, SolverConfig(backend="cyclic", outer_tol=1e-10, max_outer=20_000))
    replicated = solve_replicated(problem, TIGHT)
    assert projected.objective == pytest.approx(replicated.objective, rel=1e-6)
    np.testing.assert_allclose(projected.x, replicated.x, atol=1e-6)


def _reference_objective(problem: Problem) -> float:
    return solve(problem, SolverConfig(outer_tol=1e-14, max_outer=100_000)).objective


@pytest.mark.slow
def test_fista_objective_gap_decays_quadratically():
    rng = np.random.default_rng(2024)
    gs = random_structure(rng, 60, 20, max_size=6)
    design, response = least_squares_problem(rng, 30, gs, relevant=8)
    problem = Problem(design=design, response=response, tau=1.0, structure=gs)
    problem = problem.with_tau(0.05 * tau_max(problem))
    reference = _reference_objective(problem)

    config = SolverConfig(alpha=4.1, record_objective=True, max_outer=500, outer_tol=1e-16)
    history = solve(problem, config).history
    m = np.array([r.iteration for r in history if 10 <= r.iteration <= 500], dtype=float)
    gaps = np.array([r.objective for r in history if 10 <= r.iteration <= 500]) - reference
    assert (gaps > 1e-12 * reference).sum() >= 5
    assert loglog_slope(m[gaps > 1e-12 * reference], gaps[gaps > 1e-12 * reference]) <= -1.8


@pytest.mark.slow
def test_ista_averaged_objective_gap_decays_linearly():
    rng = np.random.default_rng(2025)
    gs = GroupStructure(d=40, groups=[list(range(k, k + 4)) for k in range(0, 40, 4)])
    design, response = least_squares_problem(rng, 20, gs, relevant=8)
    problem = Problem(design=design, response=response, tau=1.0, structure=gs)
    problem = problem.with_tau(0.05 * tau_max(problem))
    reference = _reference_objective(problem)

    averages = {}

    def keep_average(state):
        if 10 <= state.iteration <= 500:
            averages[state.iteration] = state.average.copy()

    config = SolverConfig(algorithm="ista", alpha=2.1, max_outer=500, outer_tol=1e-16)
    solve(problem, config, callback=keep_average)
    m = np.array(sorted(averages), dtype=float)
    gaps = np.array(
        [objective(problem, averages[k], penalty=_disjoint_penalty(averages[k], gs)) for k in sorted(averages)]
    ) - reference
    assert loglog_slope(m, gaps) <= -0.9


def _disjoint_penalty(x: np.ndarray, gs: GroupStructure) -> float:
    return float(np.sum(gs.group_norms(x, 2.0)))


def test_objective_helper_evaluates_penalty():
    problem = small_problem(seed=12)
    x = np.random.default_rng(12).standard_normal(problem.d)
    expected = np.sum((problem.design @ x - problem.response) ** 2) / problem.n + 2 * problem.tau * penalty_value(x, problem.structure)
    assert objective(problem, x) == pytest.approx(expected)
