import typing as t

import arrow
import numpy as np

from latent_group_lasso.errors import NumericalError, StructureError


def enforce_datetime_format(v: str) -> str:
    # Check ISO-8601 format
    try:
        arrow.get(v)
    except (arrow.ParserError, TypeError):
        raise ValueError(f"Date-time string '{v}' is not ISO-8601 compliant.")

    if len(v) < 11 or v[10] != "T":
        raise ValueError(
            f"Date-time string '{v}' must use 'T' to separate the date and time values."
        )

    # Manifests are always written in UTC with an explicit offset
    if not (v.endswith("Z") or v.endswith("+00:00")):
        raise ValueError(f"Date-time string '{v}' must be expressed in UTC.")
    return v


def utc_timestamp() -> str:
    return arrow.utcnow().isoformat()


def as_vector(x: t.Any, size: int, name: str = "vector") -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if arr.ndim != 1 or arr.shape[0] != size:
        raise StructureError(
            f"{name} must be a vector of length {size}, got shape {arr.shape}"
        )
    return arr


def ensure_finite(x: np.ndarray, what: str, iteration: int) -> np.ndarray:
    if not np.all(np.isfinite(x)):
        raise NumericalError(f"non-finite values in {what}", iteration=iteration)
    return x
