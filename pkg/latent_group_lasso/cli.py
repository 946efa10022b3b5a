"""``gso`` command line: solve, path, prox, bench and gen.

Exit status is 0 on success, 2 for unreadable or inconsistent input and 3
when a solver fails to converge or produces non-finite values. Diagnostics
go to stderr; the environment variable GSO_SEED overrides ``--seed``.
"""

from __future__ import annotations

import argparse
import logging
import math
import os
import sys
import time
import typing as t
from pathlib import Path

from pydantic import ValidationError

from latent_group_lasso import fileio
from latent_group_lasso.base_models import BackendName
from latent_group_lasso.errors import (
    ConvergenceError,
    InputError,
    NumericalError,
    StructureError,
)
from latent_group_lasso.path_bench import (
    Mode,
    ProxBenchInstance,
    Scenario,
    SyntheticSpec,
    auto_tau_range,
    benchmark,
    generate,
    regularization_path,
    tau_grid,
    tau_max,
)
from latent_group_lasso.prox_core import prox
from latent_group_lasso.solver import Algorithm, Problem, SolverConfig, solve

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NUMERICAL = 3

SEED_VARIABLE = "GSO_SEED"

BACKEND_ALIASES = {
    "cyclic": BackendName.cyclic,
    "dual": BackendName.dual_newton,
    "dual_newton": BackendName.dual_newton,
}


def parse_exponent(value: str) -> float:
    if value.strip().lower() in ("inf", "infinity", "∞"):
        return math.inf
    try:
        return float(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid exponent {value!r}") from None


def parse_backend(value: str) -> BackendName:
    try:
        return BACKEND_ALIASES[value]
    except KeyError:
        raise argparse.ArgumentTypeError(
            f"unknown backend {value!r}; choose from {', '.join(BACKEND_ALIASES)}"
        ) from None


def _exponent_label(p: float) -> float | str:
    return "inf" if math.isinf(p) else p


def resolve_seed(seed: int | None) -> int | None:
    override = os.environ.get(SEED_VARIABLE)
    if override is None:
        return seed
    try:
        return int(override)
    except ValueError:
        raise StructureError(f"{SEED_VARIABLE} must be an integer, got {override!r}") from None


def _add_problem_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("matrix", type=Path, help="design matrix CSV (rows are samples)")
    parser.add_argument("response", type=Path, help="response vector CSV")
    parser.add_argument("groups", type=Path, help="group structure JSON (1-based)")
    parser.add_argument("--header", action="store_true", help="CSV inputs start with a header row")
    parser.add_argument("--p", type=parse_exponent, default=2.0, help="penalty exponent, 2 or inf")


def _add_config_arguments(parser: argparse.ArgumentParser, schedule: bool = True) -> None:
    parser.add_argument("--algorithm", choices=[a.value for a in Algorithm], default="fista")
    parser.add_argument("--backend", type=parse_backend, default=None)
    parser.add_argument("--outer-tol", type=float, default=1e-6)
    parser.add_argument("--max-outer", type=int, default=10_000)
    if schedule:
        parser.add_argument("--eps0", type=float, default=1.0)
        parser.add_argument("--alpha", type=float, default=None, help="tolerance schedule exponent")
        parser.add_argument("--sigma-override", type=float, default=None)
        parser.add_argument("--allow-weak-schedule", action="store_true")


def _config_from(args: argparse.Namespace) -> SolverConfig:
    values = dict(
        algorithm=args.algorithm,
        backend=args.backend,
        outer_tol=args.outer_tol,
        max_outer=args.max_outer,
    )
    for name in ("eps0", "alpha", "sigma_override", "allow_weak_schedule"):
        if hasattr(args, name):
            values[name] = getattr(args, name)
    return SolverConfig(**values)


def _load_problem(args: argparse.Namespace, tau: float) -> Problem:
    design = fileio.read_matrix(args.matrix, header=args.header)
    response = fileio.read_vector(args.response, header=args.header)
    gs = fileio.read_groups(args.groups)
    if design.shape[0] != response.shape[0]:
        raise InputError(
            str(args.response),
            f"has {response.shape[0]} values but {args.matrix} has {design.shape[0]} rows",
        )
    if design.shape[1] != gs.d:
        raise InputError(
            str(args.groups), f"declares d={gs.d} but {args.matrix} has {design.shape[1]} columns"
        )
    return Problem(design=design, response=response, tau=tau, structure=gs, p=args.p)


def cmd_solve(args: argparse.Namespace) -> int:
    config = _config_from(args)
    manifest = fileio.RunManifest.start(
        "solve",
        inputs={"matrix": args.matrix, "response": args.response, "groups": args.groups},
        parameters={"tau": args.tau, "p": _exponent_label(args.p), **config.model_dump(mode="json")},
    )
    problem = _load_problem(args, args.tau)
    start = time.perf_counter()
    result = solve(problem, config)
    manifest.wall_seconds = time.perf_counter() - start

    fileio.write_vector(args.output, result.x)
    fileio.write_sidecar(
        args.output,
        manifest,
        {
            "iterations": result.iterations,
            "converged": result.converged,
            "objective": result.objective,
            "sigma": result.sigma,
            "backend": config.projection_backend(problem.p).name.value,
            "selected_groups": [r + 1 for r in result.selected_groups],
            "active_groups": [rec.active_groups for rec in result.history],
            "inner_iterations": [rec.inner_iterations for rec in result.history],
            "inner_residuals": [rec.inner_residual for rec in result.history],
        },
    )
    logger.info("wrote %s (%d iterations)", args.output, result.iterations)
    return EXIT_OK


def cmd_path(args: argparse.Namespace) -> int:
    config = _config_from(args)
    problem = _load_problem(args, tau=1.0)
    if args.auto_grid:
        lower, upper = auto_tau_range(problem, config)
    else:
        upper = args.tau_max or tau_max(problem)
        if upper == 0.0:
            raise StructureError("tau_max is zero: the response is orthogonal to the design")
        lower = args.tau_min or upper * 1e-2
    taus = tau_grid(lower, upper, args.tau_count)

    manifest = fileio.RunManifest.start(
        "path",
        inputs={"matrix": args.matrix, "response": args.response, "groups": args.groups},
        parameters={
            "p": _exponent_label(args.p),
            "mode": args.mode,
            "tau_min": lower,
            "tau_max": upper,
            "tau_count": args.tau_count,
            "auto_grid": args.auto_grid,
            **config.model_dump(mode="json"),
        },
    )
    start = time.perf_counter()
    result = regularization_path(problem, taus, config, mode=args.mode)
    manifest.wall_seconds = time.perf_counter() - start

    fileio.write_path_csv(args.output, result)
    fileio.write_sidecar(
        args.output,
        manifest,
        {"total_outer_iterations": result.total_outer_iterations, "failures": result.failures},
    )
    if result.failures:
        logger.warning("%d of %d path entries failed", result.failures, len(result.entries))
    return EXIT_OK


def cmd_prox(args: argparse.Namespace) -> int:
    x = fileio.read_vector(args.vector, header=args.header)
    gs = fileio.read_groups(args.groups)
    if x.shape[0] != gs.d:
        raise InputError(str(args.vector), f"has {x.shape[0]} values but groups declare d={gs.d}")
    manifest = fileio.RunManifest.start(
        "prox",
        inputs={"vector": args.vector, "groups": args.groups},
        parameters={
            "lambda": args.lam,
            "p": _exponent_label(args.p),
            "backend": args.backend.value if args.backend else None,
            "tol": args.tol,
        },
    )
    start = time.perf_counter()
    result = prox(x, args.lam, gs, args.p, backend=args.backend, tol=args.tol)
    manifest.wall_seconds = time.perf_counter() - start

    fileio.write_vector(args.output, result.prox_point)
    fileio.write_sidecar(
        args.output,
        manifest,
        {
            "backend": result.backend.value if result.backend else None,
            "active_groups": [int(r) + 1 for r in result.active_set.members],
            "backend_iterations": result.backend_iterations,
            "achieved_tolerance_estimate": result.achieved_tolerance_estimate,
        },
    )
    return EXIT_OK


def _spec_from(args: argparse.Namespace, seed: int) -> SyntheticSpec:
    return SyntheticSpec(
        scenario=args.scenario,
        d=args.d,
        group_size=args.db,
        overlap=args.alpha,
        n=args.n,
        seed=seed,
    )


def cmd_bench(args: argparse.Namespace) -> int:
    seed = resolve_seed(args.seed)
    spec = _spec_from(args, seed)
    config = _config_from(args)
    manifest = fileio.RunManifest.start(
        "bench",
        parameters={
            **spec.model_dump(mode="json"),
            "modes": args.modes,
            "reps": args.reps,
            "workers": args.workers,
            "tau_count": args.tau_count,
            "relative_tol": args.relative_tol,
            "per_tau": args.per_tau,
            **config.model_dump(mode="json"),
        },
        seed=seed,
    )
    start = time.perf_counter()
    report = benchmark(
        spec,
        modes=args.modes,
        repetitions=args.reps,
        config=config,
        tau_count=args.tau_count,
        relative_tol=args.relative_tol,
        workers=args.workers,
        timing=not args.no_timing,
    )
    manifest.wall_seconds = time.perf_counter() - start

    fileio.write_benchmark_csv(args.output, report, per_tau=args.per_tau)
    summary = report.summary()
    fileio.write_sidecar(args.output, manifest, {"summary": [s.model_dump() for s in summary]})
    for line in summary:
        print(line, file=sys.stderr)
    return EXIT_OK


def cmd_gen(args: argparse.Namespace) -> int:
    seed = resolve_seed(args.seed)
    spec = _spec_from(args, seed)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = fileio.RunManifest.start("gen", parameters=spec.model_dump(mode="json"), seed=seed)
    instance = generate(spec)

    groups = fileio.write_groups(out_dir / "groups.json", instance.structure)
    if isinstance(instance, ProxBenchInstance):
        written = [fileio.write_vector(out_dir / "x.csv", instance.x), groups]
        diagnostics = {"tau_2": instance.tau_2, "tau_inf": instance.tau_inf}
    else:
        written = [
            fileio.write_matrix(out_dir / "design.csv", instance.design),
            fileio.write_vector(out_dir / "response.csv", instance.response),
            groups,
        ]
        diagnostics = {
            "true_groups": [r + 1 for r in instance.true_groups],
            "true_support": [j + 1 for j in instance.true_support],
            "coefficient": instance.coefficient,
        }
    for path in written:
        fileio.write_sidecar(path, manifest, diagnostics)
    logger.info("wrote %s", ", ".join(str(p) for p in written))
    return EXIT_OK


def _add_spec_arguments(parser: argparse.ArgumentParser, default_scenario: str | None) -> None:
    parser.add_argument(
        "--scenario",
        choices=[s.value for s in Scenario],
        default=default_scenario,
        required=default_scenario is None,
    )
    parser.add_argument("--d", type=int, default=1000)
    parser.add_argument("--db", type=int, default=10, help="group size")
    parser.add_argument("--alpha", type=float, default=1.2, help="overlap factor")
    parser.add_argument("--n", type=int, default=None, help="number of samples")
    parser.add_argument("--seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gso", description="Latent group lasso with overlapping groups."
    )
    parser.add_argument(
        "-v", "--verbose", action="count", default=0, help="repeat for more detail"
    )
    commands = parser.add_subparsers(dest="command", required=True)

    p = commands.add_parser("solve", help="solve at one tau")
    _add_problem_arguments(p)
    _add_config_arguments(p)
    p.add_argument("--tau", type=float, required=True)
    p.add_argument("-o", "--output", type=Path, default=Path("solution.csv"))
    p.set_defaults(handler=cmd_solve)

    p = commands.add_parser("path", help="regularization path over a geometric tau grid")
    _add_problem_arguments(p)
    _add_config_arguments(p)
    grid = p.add_mutually_exclusive_group()
    grid.add_argument("--auto-grid", action="store_true", help="pick tau_min by a loose pre-pass")
    grid.add_argument("--tau-min", type=float, default=None, help="defaults to tau_max / 100")
    p.add_argument("--tau-max", type=float, default=None, help="defaults to the computed tau_max")
    p.add_argument("--tau-count", type=int, default=50)
    p.add_argument("--mode", choices=[m.value for m in Mode], default="projection")
    p.add_argument("-o", "--output", type=Path, default=Path("path.csv"))
    p.set_defaults(handler=cmd_path)

    p = commands.add_parser("prox", help="proximity operator of lambda * Omega")
    p.add_argument("vector", type=Path)
    p.add_argument("groups", type=Path)
    p.add_argument("--lambda", dest="lam", type=float, required=True)
    p.add_argument("--p", type=parse_exponent, default=2.0)
    p.add_argument("--backend", type=parse_backend, default=None)
    p.add_argument("--tol", type=float, default=1e-8)
    p.add_argument("--header", action="store_true")
    p.add_argument("-o", "--output", type=Path, default=Path("prox.csv"))
    p.set_defaults(handler=cmd_prox)

    p = commands.add_parser("bench", help="time projection against replication")
    _add_spec_arguments(p, default_scenario=None)
    _add_config_arguments(p, schedule=False)
    p.add_argument("--modes", nargs="+", choices=[m.value for m in Mode], default=[m.value for m in Mode])
    p.add_argument("--reps", type=int, default=1)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--no-timing", action="store_true", help="allow several workers")
    p.add_argument("--tau-count", type=int, default=50)
    p.add_argument("--relative-tol", type=float, default=1e-3)
    p.add_argument("--per-tau", action="store_true", help="add one row per path tau")
    p.add_argument("-o", "--output", type=Path, default=Path("bench.csv"))
    p.set_defaults(handler=cmd_bench)

    p = commands.add_parser("gen", help="write a synthetic problem")
    _add_spec_arguments(p, default_scenario=Scenario.regression_overlap.value)
    p.add_argument("--out-dir", type=Path, default=Path("."))
    p.set_defaults(handler=cmd_gen)
    return parser


def configure_logging(verbosity: int) -> None:
    level = max(logging.WARNING - 10 * verbosity, logging.DEBUG)
    logging.basicConfig(
        level=level,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )


def main(argv: t.Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(args.verbose)
    try:
        return args.handler(args)
    except (InputError, StructureError, ValidationError) as e:
        print(f"gso {args.command}: {e}", file=sys.stderr)
        return EXIT_INPUT
    except (ConvergenceError, NumericalError) as e:
        print(f"gso {args.command}: {e}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
