"""Equal assignment of each group over the edges it can reach, plus the zero-distance certificate."""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from hflassign.population import (
    GroupAssignment,
    GroupSizes,
    PopulationError,
    PopulationMatrix,
    Topology,
)


class RemainderPolicy(str, Enum):
    LAST_EDGE = "last_edge"
    ROUND_ROBIN = "round_robin"


class UndersizedPolicy(str, Enum):
    FIRST_INDICES = "first_indices"
    LEAST_LOADED = "least_loaded"


@dataclass(frozen=True)
class HeuristicConfig:
    remainder_policy: RemainderPolicy = RemainderPolicy.LAST_EDGE
    undersized_policy: UndersizedPolicy = UndersizedPolicy.FIRST_INDICES


class UnreachableGroupError(PopulationError):
    pass


def _sizes_of(sizes) -> np.ndarray:
    if isinstance(sizes, PopulationMatrix):
        return sizes.sizes.sizes
    if isinstance(sizes, GroupSizes):
        return sizes.sizes
    return GroupSizes(np.asarray(sizes)).sizes


def equal_assign(
    sizes: GroupSizes | PopulationMatrix,
    topo: Topology,
    cfg: HeuristicConfig = HeuristicConfig(),
    pop: PopulationMatrix | None = None,
) -> GroupAssignment:
    """Split every group as evenly as possible over its reachable edges.

    Reachable edges are taken in ascending index order and groups are
    visited in ascending order. When the split is uneven the whole
    remainder lands on a single edge: the last reachable one, or (with
    ``round_robin``) an edge that rotates from group to group. Groups
    smaller than their reach fill the first edges, or the least loaded
    ones by data mass when ``least_loaded`` is chosen (ties go to the
    lower index; needs ``pop``).
    """
    g = _sizes_of(sizes)
    if pop is None and isinstance(sizes, PopulationMatrix):
        pop = sizes
    if topo.num_columns != g.size:
        raise PopulationError("topology and sizes disagree on the number of groups")
    if cfg.undersized_policy == UndersizedPolicy.LEAST_LOADED and pop is None:
        raise PopulationError("least_loaded placement needs the population")
    N = topo.num_edges
    alloc = np.zeros((g.size, N), dtype=np.int64)
    load = np.zeros(N, dtype=np.int64)
    mass = pop.per_user.sum(axis=0) if pop is not None else np.ones(g.size, dtype=np.int64)
    rotation = 0
    for o in range(g.size):
        edges = topo.reachable(o)
        rho = edges.size
        if rho == 0:
            raise UnreachableGroupError(f"unreachable group {o}")
        G = int(g[o])
        if G % rho == 0:
            alloc[o, edges] = G // rho
        elif G > rho:
            alloc[o, edges] = G // rho
            if cfg.remainder_policy == RemainderPolicy.ROUND_ROBIN:
                target = edges[rotation % rho]
                rotation += 1
            else:
                target = edges[-1]
            alloc[o, target] += G % rho
        else:
            if cfg.undersized_policy == UndersizedPolicy.LEAST_LOADED:
                order = np.argsort(load[edges], kind="stable")
                chosen = np.sort(edges[order[:G]])
            else:
                chosen = edges[:G]
            alloc[o, chosen] = 1
        load += alloc[o] * mass[o]
    return GroupAssignment(alloc)


@dataclass(frozen=True)
class Lemma3Check:
    applies: bool
    failing_group: int | None = None
    reason: str = ""

    def __bool__(self) -> bool:
        return self.applies


def lemma3_applies(sizes: GroupSizes | PopulationMatrix, topo: Topology) -> Lemma3Check:
    """Whether every group reaches all edges and splits into them exactly.

    Under these conditions the even split reproduces the global class
    distribution on every edge, so the distance objective is zero.
    """
    g = _sizes_of(sizes)
    N = topo.num_edges
    for o in range(g.size):
        if not topo.reach[:, o].all():
            return Lemma3Check(False, o, f"group {o} does not reach every edge")
        if g[o] % N:
            return Lemma3Check(False, o, f"group {o}: size {g[o]} mod {N} = {g[o] % N}")
    return Lemma3Check(True)
