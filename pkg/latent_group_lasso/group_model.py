"""Group structures, group-restricted norms and the latent (replicated) space.

Groups are stored 0-based in memory. The JSON group file and every error
message use the 1-based convention: ``{"d": 3, "groups": [[1, 2], [2, 3]]}``.
"""

from __future__ import annotations

import functools
import json
import math
import typing as t

import numpy as np
import scipy.sparse as sp
from pydantic import (
    BaseModel,
    ConfigDict,
    Field,
    PositiveInt,
    computed_field,
    field_validator,
    model_validator,
)

from latent_group_lasso.base_models import FrozenArrayModel
from latent_group_lasso.errors import StructureError
from latent_group_lasso.utils import as_vector


class ExponentPair(BaseModel):
    p: float
    model_config = ConfigDict(extra="forbid", frozen=True)

    @field_validator("p")
    def validate_exponent(cls, v: float) -> float:
        if math.isnan(v) or v <= 1:
            raise ValueError(f"Penalty exponent p must lie in (1, inf], got {v}")
        return float(v)

    @computed_field
    @property
    def q(self) -> float:
        if math.isinf(self.p):
            return 1.0
        if self.p == 2.0:
            return 2.0
        return self.p / (self.p - 1.0)

    @property
    def has_closed_form_projector(self) -> bool:
        return self.p == 2.0 or math.isinf(self.p)


def exponent_pair(p: float | str | ExponentPair) -> ExponentPair:
    if isinstance(p, ExponentPair):
        return p
    return ExponentPair(p=p)


def vector_norm(values: np.ndarray, q: float) -> float:
    if values.size == 0:
        return 0.0
    if math.isinf(q):
        return float(np.max(np.abs(values)))
    return float(np.linalg.norm(values, ord=q))


class GroupFile(BaseModel):
    """The 1-based layout of a group file, before any index is shifted."""

    d: PositiveInt
    groups: list[list[int]]

    model_config = ConfigDict(extra="forbid")

    @field_validator("groups", mode="before")
    def validate_integer_indices(cls, v):
        if not isinstance(v, list):
            return v
        for r, group in enumerate(v, start=1):
            if not isinstance(group, list):
                raise ValueError(f"group {r} must be a list of indices")
            for j in group:
                if isinstance(j, bool) or not isinstance(j, int):
                    raise ValueError(f"group {r} contains a non-integer index {j!r}")
        return v


class GroupStructure(BaseModel):
    d: PositiveInt
    groups: tuple[tuple[int, ...], ...] = Field(..., min_length=1)

    model_config = ConfigDict(extra="forbid", frozen=True)

    @field_validator("groups")
    def validate_groups(cls, v: tuple[tuple[int, ...], ...]):
        groups = []
        for r, group in enumerate(v, start=1):
            if len(group) == 0:
                raise ValueError(f"group {r} is empty")
            if len(set(group)) != len(group):
                duplicates = sorted({j + 1 for j in group if group.count(j) > 1})
                raise ValueError(
                    f"group {r} contains duplicate indices: {', '.join(map(str, duplicates))}"
                )
            groups.append(tuple(sorted(group)))
        return tuple(groups)

    @model_validator(mode="after")
    def validate_indices_cover_dimension(self):
        covered = set()
        for r, group in enumerate(self.groups, start=1):
            if group[0] < 0 or group[-1] >= self.d:
                bad = group[0] if group[0] < 0 else group[-1]
                raise ValueError(
                    f"group {r} contains index {bad + 1} outside [1, {self.d}]"
                )
            covered.update(group)
        if len(covered) != self.d:
            missing = sorted(set(range(self.d)) - covered)[:10]
            raise ValueError(
                "groups must cover every coordinate; uncovered (first 10): "
                f"{', '.join(str(j + 1) for j in missing)}"
            )
        return self

    @classmethod
    def from_json(cls, document: dict | str) -> GroupStructure:
        if isinstance(document, str):
            document = json.loads(document)
        layout = GroupFile.model_validate(document)
        return cls(d=layout.d, groups=[[j - 1 for j in g] for g in layout.groups])

    def to_json(self) -> dict:
        return {"d": self.d, "groups": [[j + 1 for j in g] for g in self.groups]}

    @computed_field
    @property
    def replicated_dim(self) -> int:
        return sum(len(g) for g in self.groups)

    @property
    def n_groups(self) -> int:
        return len(self.groups)

    @functools.cached_property
    def group_arrays(self) -> list[np.ndarray]:
        return [np.asarray(g, dtype=np.intp) for g in self.groups]

    @functools.cached_property
    def group_sizes(self) -> np.ndarray:
        return np.fromiter((len(g) for g in self.groups), dtype=np.intp)

    @functools.cached_property
    def group_offsets(self) -> np.ndarray:
        offsets = np.zeros(self.n_groups, dtype=np.intp)
        np.cumsum(self.group_sizes[:-1], out=offsets[1:])
        return offsets

    @functools.cached_property
    def latent_index(self) -> np.ndarray:
        """Coordinate of every latent slot, blocks laid out in group order."""
        return np.concatenate(self.group_arrays)

    @functools.cached_property
    def incidence(self) -> sp.csr_matrix:
        """B x d matrix with a one where group r contains coordinate j."""
        rows = np.repeat(np.arange(self.n_groups), self.group_sizes)
        data = np.ones(self.replicated_dim)
        return sp.csr_matrix(
            (data, (rows, self.latent_index)), shape=(self.n_groups, self.d)
        )

    @functools.cached_property
    def overlap_graph(self) -> sp.csr_matrix:
        """Entry (r, s) is the size of G_r ∩ G_s; the diagonal holds |G_r|."""
        return (self.incidence @ self.incidence.T).tocsr()

    @functools.cached_property
    def multiplicity(self) -> np.ndarray:
        return np.bincount(self.latent_index, minlength=self.d)

    def group_norms(self, x: np.ndarray, q: float) -> np.ndarray:
        magnitudes = np.abs(x[self.latent_index])
        offsets = self.group_offsets
        if math.isinf(q):
            return np.maximum.reduceat(magnitudes, offsets)
        if q == 1:
            return np.add.reduceat(magnitudes, offsets)
        if q == 2:
            return np.sqrt(np.add.reduceat(magnitudes * magnitudes, offsets))
        return np.add.reduceat(magnitudes**q, offsets) ** (1.0 / q)

    def blocks(self, v: np.ndarray) -> list[np.ndarray]:
        return np.split(v, self.group_offsets[1:])

    def block_norms(self, v: np.ndarray, q: float) -> np.ndarray:
        """Per-group q-norms of a latent vector."""
        magnitudes = np.abs(v)
        offsets = self.group_offsets
        if math.isinf(q):
            return np.maximum.reduceat(magnitudes, offsets)
        if q == 1:
            return np.add.reduceat(magnitudes, offsets)
        if q == 2:
            return np.sqrt(np.add.reduceat(magnitudes * magnitudes, offsets))
        return np.add.reduceat(magnitudes**q, offsets) ** (1.0 / q)

    def replicate(self, x: np.ndarray) -> np.ndarray:
        return as_vector(x, self.d, "x")[self.latent_index]

    def adjoint_sum(self, v: np.ndarray) -> np.ndarray:
        v = as_vector(v, self.replicated_dim, "latent vector")
        return np.bincount(self.latent_index, weights=v, minlength=self.d)


class ActiveSet(FrozenArrayModel):
    """Groups whose q-norm strictly exceeds the projection radius."""

    structure: GroupStructure
    member_flags: np.ndarray

    @model_validator(mode="after")
    def validate_flags(self):
        if self.member_flags.dtype != bool or self.member_flags.shape != (
            self.structure.n_groups,
        ):
            raise ValueError(
                f"member_flags must be a boolean vector of length {self.structure.n_groups}"
            )
        self.member_flags.setflags(write=False)
        return self

    @functools.cached_property
    def members(self) -> np.ndarray:
        return np.flatnonzero(self.member_flags)

    def __len__(self) -> int:
        return int(self.members.size)

    @property
    def is_empty(self) -> bool:
        return self.members.size == 0

    @property
    def groups(self) -> list[np.ndarray]:
        arrays = self.structure.group_arrays
        return [arrays[r] for r in self.members]

    @functools.cached_property
    def indicator(self) -> sp.csr_matrix:
        """d x B̂ matrix whose row j flags the active groups containing j."""
        return self.structure.incidence[self.members].T.tocsr()

    def groups_containing(self, j: int) -> list[int]:
        row = self.indicator.getrow(j)
        return [int(self.members[k]) for k in np.sort(row.indices)]

    @functools.cached_property
    def covered(self) -> np.ndarray:
        return np.diff(self.indicator.indptr) > 0

    @functools.cached_property
    def overlap_graph(self) -> sp.csr_matrix:
        members = self.members
        return self.structure.overlap_graph[members][:, members].tocsr()

    @property
    def is_disjoint(self) -> bool:
        return self.overlap_graph.nnz == len(self)


def group_norm(x: np.ndarray, group: t.Sequence[int], q: float) -> float:
    x = np.asarray(x, dtype=float)
    indices = np.asarray(group, dtype=np.intp)
    if indices.size == 0:
        raise StructureError("group is empty")
    if indices.min() < 0 or indices.max() >= x.shape[0]:
        raise StructureError(
            f"group indices must lie in [1, {x.shape[0]}] (1-based), got {sorted(set(indices + 1))}"
        )
    return vector_norm(x[indices], q)


def active_groups(
    x: np.ndarray, lam: float, gs: GroupStructure, q: float
) -> ActiveSet:
    if not lam > 0:
        raise StructureError(f"active-group level must be positive, got {lam}")
    x = as_vector(x, gs.d, "x")
    return ActiveSet(structure=gs, member_flags=gs.group_norms(x, q) > lam)


def full_active_set(gs: GroupStructure) -> ActiveSet:
    return ActiveSet(structure=gs, member_flags=np.ones(gs.n_groups, dtype=bool))


def replicate(gs: GroupStructure, x: np.ndarray) -> np.ndarray:
    return gs.replicate(x)


def adjoint_sum(gs: GroupStructure, v: np.ndarray) -> np.ndarray:
    return gs.adjoint_sum(v)


def variable_support(x: np.ndarray) -> np.ndarray:
    return np.flatnonzero(x)


def groups_in_support(x: np.ndarray, gs: GroupStructure, atol: float = 0.0) -> list[int]:
    """Groups lying entirely inside {j : |x_j| > atol}."""
    x = as_vector(x, gs.d, "x")
    inside = np.abs(x) > atol
    return [r for r, g in enumerate(gs.group_arrays) if bool(np.all(inside[g]))]
