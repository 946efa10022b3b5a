"""Problem files in, solution files out.

Matrices and vectors are comma-separated text (rows are samples, columns are
variables), groups are the 1-based JSON document of `GroupStructure`. Every
float is written with 17 significant digits, and every output file gets a
``<name>.manifest.json`` sidecar holding the `RunManifest`.
"""

from __future__ import annotations

import csv
import importlib.metadata
import json
import os
import typing as t
from pathlib import Path

import numpy as np
from pydantic import BaseModel, ConfigDict, NonNegativeFloat, ValidationError, field_validator

from latent_group_lasso.errors import InputError
from latent_group_lasso.group_model import GroupStructure
from latent_group_lasso.utils import enforce_datetime_format, utc_timestamp

if t.TYPE_CHECKING:
    from latent_group_lasso.path_bench import BenchmarkReport, PathResult

FLOAT_FORMAT = "%.17g"
VERSIONED_PACKAGES = ("latent-group-lasso", "numpy", "scipy", "pydantic", "arrow")

PathLike = t.Union[str, os.PathLike]


def _format(value: float) -> str:
    return FLOAT_FORMAT % value


def package_versions() -> dict[str, str]:
    versions = {}
    for name in VERSIONED_PACKAGES:
        try:
            versions[name] = importlib.metadata.version(name)
        except importlib.metadata.PackageNotFoundError:
            versions[name] = "unknown"
    return versions


class RunManifest(BaseModel):
    command: str
    inputs: dict[str, str] = {}
    parameters: dict[str, t.Any] = {}
    seed: int | None = None
    versions: dict[str, str] = {}
    started_at: str
    wall_seconds: NonNegativeFloat | None = None

    model_config = ConfigDict(extra="forbid")

    _enforce_started_at = field_validator("started_at")(enforce_datetime_format)

    @classmethod
    def start(
        cls,
        command: str,
        inputs: dict[str, PathLike] | None = None,
        parameters: dict[str, t.Any] | None = None,
        seed: int | None = None,
    ) -> RunManifest:
        return cls(
            command=command,
            inputs={k: str(v) for k, v in (inputs or {}).items()},
            parameters=parameters or {},
            seed=seed,
            versions=package_versions(),
            started_at=utc_timestamp(),
        )


def _load_text(path: PathLike, skip_header: bool) -> np.ndarray:
    path = Path(path)
    if not path.is_file():
        raise InputError(str(path), "file not found")
    try:
        data = np.loadtxt(path, delimiter=",", skiprows=int(skip_header), ndmin=2)
    except ValueError as e:
        raise InputError(str(path), f"cannot parse numeric CSV: {e}") from e
    bad_rows = np.flatnonzero(~np.all(np.isfinite(data), axis=1))
    if bad_rows.size:
        row = int(bad_rows[0]) + 1 + int(skip_header)
        raise InputError(str(path), f"row {row} contains a non-finite value")
    return data


def read_matrix(path: PathLike, header: bool = False) -> np.ndarray:
    data = _load_text(path, header)
    if data.size == 0:
        raise InputError(str(path), "matrix is empty")
    return data


def read_vector(path: PathLike, header: bool = False) -> np.ndarray:
    """One value per line; a single row of comma-separated values is also accepted."""
    data = _load_text(path, header)
    if data.size == 0:
        raise InputError(str(path), "vector is empty")
    if data.shape[1] == 1:
        return data[:, 0]
    if data.shape[0] == 1:
        return data[0]
    raise InputError(
        str(path), f"expected a single column or row, got shape {data.shape}"
    )


def read_groups(path: PathLike) -> GroupStructure:
    path = Path(path)
    if not path.is_file():
        raise InputError(str(path), "file not found")
    try:
        document = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise InputError(str(path), f"invalid JSON at line {e.lineno}: {e.msg}") from e
    if not isinstance(document, dict) or not {"d", "groups"} <= document.keys():
        raise InputError(str(path), 'expected an object with "d" and "groups"')
    try:
        return GroupStructure.from_json(document)
    except (ValidationError, TypeError, ValueError) as e:
        raise InputError(str(path), str(e)) from e


def write_groups(path: PathLike, gs: GroupStructure) -> Path:
    path = Path(path)
    path.write_text(json.dumps(gs.to_json()) + "\n")
    return path


def write_vector(path: PathLike, x: np.ndarray) -> Path:
    path = Path(path)
    np.savetxt(path, np.asarray(x, dtype=float).reshape(-1, 1), fmt=FLOAT_FORMAT)
    return path


def write_matrix(path: PathLike, matrix: np.ndarray) -> Path:
    path = Path(path)
    np.savetxt(path, np.atleast_2d(matrix), fmt=FLOAT_FORMAT, delimiter=",")
    return path


def sidecar_path(path: PathLike) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".manifest.json")


def write_sidecar(
    path: PathLike, manifest: RunManifest, diagnostics: dict[str, t.Any] | None = None
) -> Path:
    target = sidecar_path(path)
    document = {"manifest": manifest.model_dump(mode="json")}
    if diagnostics is not None:
        document["diagnostics"] = diagnostics
    target.write_text(json.dumps(document, indent=2, default=_json_default) + "\n")
    return target


def read_sidecar(path: PathLike) -> tuple[RunManifest, dict[str, t.Any]]:
    document = json.loads(sidecar_path(path).read_text())
    return RunManifest.model_validate(document["manifest"]), document.get("diagnostics", {})


def _json_default(value: t.Any):
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, np.generic):
        return value.item()
    raise TypeError(f"{type(value).__name__} is not JSON serializable")


def write_path_csv(path: PathLike, result: PathResult) -> Path:
    """One row per tau, in path order; supports and groups are 1-based."""
    path = Path(path)
    d = len(result.entries[0].x) if result.entries else 0
    with path.open("w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(
            ["tau", "outer_iterations", "seconds", "converged", "n_selected",
             "support", "selected_groups", "error"]
            + [f"x{j + 1}" for j in range(d)]
        )
        for entry in result.entries:
            writer.writerow(
                [
                    _format(entry.tau),
                    entry.outer_iterations,
                    _format(entry.seconds),
                    int(entry.converged),
                    len(entry.support),
                    " ".join(str(j + 1) for j in entry.support),
                    " ".join(str(r + 1) for r in entry.selected_groups),
                    entry.error or "",
                ]
                + [_format(v) for v in entry.x]
            )
    return path


BENCHMARK_COLUMNS = (
    "scenario",
    "d",
    "dB",
    "alpha",
    "mode",
    "seed",
    "total_seconds",
    "total_outer_iters",
    "failures",
    "distance",
    "error",
)


def write_benchmark_csv(path: PathLike, report: BenchmarkReport, per_tau: bool = False) -> Path:
    """One row per run; with `per_tau`, a `tau` column and one more row per
    path tau follow."""
    path = Path(path)

    def cell(value):
        if value is None:
            return ""
        if isinstance(value, float):
            return _format(value)
        return value

    rows = report.rows + report.tau_rows if per_tau else report.rows
    columns = list(BENCHMARK_COLUMNS)
    if per_tau:
        columns.insert(columns.index("seed") + 1, "tau")

    with path.open("w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(columns)
        for row in rows:
            values = [
                row.scenario.value,
                row.d,
                row.group_size,
                cell(row.overlap),
                row.mode,
                row.seed,
                cell(row.total_seconds),
                cell(row.total_outer_iters),
                row.failures,
                cell(row.distance),
                row.error or "",
            ]
            if per_tau:
                values.insert(columns.index("tau"), cell(row.tau))
            writer.writerow(values)
    return path
