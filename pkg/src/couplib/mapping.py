"""Nearest-neighbor data mapping between non-matching coupling meshes.

Plans are built once from the mesh geometries (the costly part) and then
applied per sample.  A consistent mapping copies each target vertex its
nearest source value; a conservative mapping sums each source value into
its nearest target vertex so that the total is preserved.  Ties are broken
towards the lowest vertex index, which keeps plans deterministic across
platforms.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, ValidationError
from .storage import Sample, Storage

CONSISTENT = "nearest-neighbor-consistent"
CONSERVATIVE = "nearest-neighbor-conservative"
IDENTITY = "identity"
KINDS = (CONSISTENT, CONSERVATIVE, IDENTITY)


@dataclass(frozen=True)
class Mesh:
    """A named set of coupling vertices in 1, 2, or 3 dimensions."""

    name: str
    dimensions: int
    vertices: np.ndarray = field(repr=False)  # (vertex_count, dimensions)

    def __post_init__(self):
        verts = np.asarray(self.vertices, dtype=float)
        if verts.ndim != 2 or verts.shape[1] != self.dimensions:
            raise ConfigurationError(
                f"mesh '{self.name}': vertex array must have shape "
                f"(n, {self.dimensions}), got {verts.shape}"
            )
        if verts.shape[0] < 1:
            raise ConfigurationError(f"mesh '{self.name}' has no vertices")
        if not np.all(np.isfinite(verts)):
            raise ConfigurationError(f"mesh '{self.name}' has non-finite coordinates")
        object.__setattr__(self, "vertices", verts)

    @property
    def vertex_count(self) -> int:
        return self.vertices.shape[0]


@dataclass(frozen=True)
class MappingPlan:
    """Precomputed vertex correspondence for one mapping direction.

    ``index_map`` holds, per target vertex, its source index (consistent)
    or, per source vertex, its target index (conservative); identity plans
    carry no map.
    """

    kind: str
    from_mesh: str
    to_mesh: str
    from_count: int
    to_count: int
    index_map: np.ndarray | None


def build_plan(kind: str, from_mesh: Mesh, to_mesh: Mesh) -> MappingPlan:
    if kind not in KINDS:
        raise ConfigurationError(f"unknown mapping kind '{kind}'")
    if from_mesh.dimensions != to_mesh.dimensions:
        raise ConfigurationError(
            f"cannot map between meshes of different dimensions "
            f"({from_mesh.name}: {from_mesh.dimensions}, "
            f"{to_mesh.name}: {to_mesh.dimensions})"
        )
    if kind == IDENTITY:
        if from_mesh.vertex_count != to_mesh.vertex_count:
            raise ConfigurationError(
                "identity mapping requires equal vertex counts"
            )
        index_map = None
    elif kind == CONSISTENT:
        index_map = _nearest(from_mesh.vertices, to_mesh.vertices)
    else:
        index_map = _nearest(to_mesh.vertices, from_mesh.vertices)
    return MappingPlan(
        kind=kind,
        from_mesh=from_mesh.name,
        to_mesh=to_mesh.name,
        from_count=from_mesh.vertex_count,
        to_count=to_mesh.vertex_count,
        index_map=index_map,
    )


def _nearest(candidates: np.ndarray, queries: np.ndarray) -> np.ndarray:
    """Index of the nearest candidate per query; ties -> lowest index."""
    # squared Euclidean distances, (n_queries, n_candidates); argmin picks
    # the first (lowest-index) minimizer, which is the tie-break rule
    diff = queries[:, None, :] - candidates[None, :, :]
    dist2 = np.einsum("qcd,qcd->qc", diff, diff)
    return np.argmin(dist2, axis=1).astype(np.int64)


def apply(plan: MappingPlan, sample: Sample) -> Sample:
    """Map one sample from the plan's source mesh onto its target mesh."""
    values = sample.values
    if values.size % plan.from_count != 0:
        raise ValidationError(
            f"sample length {values.size} is not a multiple of the source "
            f"vertex count {plan.from_count}"
        )
    comps = values.size // plan.from_count
    if plan.kind == IDENTITY:
        return Sample(values)
    src = values.reshape(plan.from_count, comps)
    if plan.kind == CONSISTENT:
        out = src[plan.index_map]
    else:
        out = np.zeros((plan.to_count, comps))
        np.add.at(out, plan.index_map, src)
    return Sample(out.reshape(-1))


def map_storage(plan: MappingPlan, storage: Storage, skip_first: bool) -> Storage:
    """Map every stample of ``storage`` individually.

    The window-start stample is carried over unmapped when ``skip_first``
    is set: it was already mapped before, either in the previous window or
    the previous iteration.  Time stamps and storage length are preserved.
    """
    stamples = storage.stamples()
    first = stamples[0]
    first_sample = first.sample if skip_first else apply(plan, first.sample)
    out = Storage(storage.degree, first.time, first_sample)
    for st in stamples[1:]:
        out.set_sample_at_time(st.time, apply(plan, st.sample))
    return out
