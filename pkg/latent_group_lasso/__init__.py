from .base_models import BackendName, Projection, ProjectionBackend
from .errors import (
    ConvergenceError,
    GroupValidationError,
    InputError,
    LatentGroupLassoError,
    NewtonFallback,
    NumericalError,
    StructureError,
)
from .group_model import (
    ActiveSet,
    ExponentPair,
    GroupStructure,
    active_groups,
    adjoint_sum,
    group_norm,
    replicate,
    variable_support,
)
from .path_bench import (
    Mode,
    PathResult,
    Scenario,
    SyntheticSpec,
    auto_tau_range,
    benchmark,
    regularization_path,
    tau_grid,
    tau_max,
)
from .proj_cyclic import CyclicBackend, cyclic_project, project_l1_ball
from .proj_dual_newton import DualNewtonBackend, projected_newton
from .prox_core import ProxResult, penalty_value, prox, prox_replicated
from .solver import (
    Algorithm,
    Problem,
    SolveResult,
    SolverConfig,
    lipschitz_sigma,
    solve,
    solve_replicated,
)

__all__ = (
    "ActiveSet",
    "Algorithm",
    "BackendName",
    "ConvergenceError",
    "CyclicBackend",
    "DualNewtonBackend",
    "ExponentPair",
    "GroupStructure",
    "GroupValidationError",
    "InputError",
    "LatentGroupLassoError",
    "Mode",
    "NewtonFallback",
    "NumericalError",
    "PathResult",
    "Problem",
    "Projection",
    "ProjectionBackend",
    "ProxResult",
    "Scenario",
    "SolveResult",
    "SolverConfig",
    "StructureError",
    "SyntheticSpec",
    "active_groups",
    "adjoint_sum",
    "auto_tau_range",
    "benchmark",
    "cyclic_project",
    "group_norm",
    "lipschitz_sigma",
    "penalty_value",
    "project_l1_ball",
    "projected_newton",
    "prox",
    "prox_replicated",
    "regularization_path",
    "replicate",
    "solve",
    "solve_replicated",
    "tau_grid",
    "tau_max",
    "variable_support",
)
