"""Class-count populations, reachability, and the weighted distribution distance.

Every quantity here is a pure function of immutable inputs. The distance
objective is evaluated through an exact integer numerator so that two
assignments with the same true objective always compare equal.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from hflassign._kernels import theta_numerator

DIST_ATOL = 1e-9

Role = Literal["user", "group"]


class PopulationError(ValueError):
    pass


class EmptyEdgeError(PopulationError):
    def __init__(self, edge: int):
        super().__init__(f"empty edge: edge {edge} receives no data")
        self.edge = edge


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class GroupSizes:
    sizes: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.sizes)
        if s.ndim != 1 or s.size == 0:
            raise PopulationError("group sizes must be a non-empty vector")
        if not np.issubdtype(s.dtype, np.integer):
            if not np.all(np.equal(np.mod(s, 1), 0)):
                raise PopulationError("group sizes must be integers")
        s = s.astype(np.int64)
        if np.any(s < 1):
            raise PopulationError("every group must contain at least one user")
        object.__setattr__(self, "sizes", _frozen(s))

    def __len__(self) -> int:
        return len(self.sizes)

    @classmethod
    def ones(cls, k: int) -> "GroupSizes":
        return cls(np.ones(k, dtype=np.int64))


@dataclass(frozen=True)
class PopulationMatrix:
    """Per-class instance counts, one column per user or per group.

    For ``role="group"`` the columns hold group *totals*; every user of
    group ``o`` carries ``counts[:, o] / sizes[o]``, which must be an
    integer vector.
    """

    counts: np.ndarray
    role: Role = "user"
    sizes: GroupSizes | None = None

    def __post_init__(self):
        c = np.asarray(self.counts)
        if c.ndim != 2:
            raise PopulationError("counts must be a C x K matrix")
        if c.shape[0] < 2:
            raise PopulationError("at least two classes are required")
        if c.shape[1] < 1:
            raise PopulationError("at least one column is required")
        if not np.issubdtype(c.dtype, np.integer):
            if not np.all(np.equal(np.mod(c, 1), 0)):
                raise PopulationError("counts must be integers")
        c = c.astype(np.int64)
        if np.any(c < 0):
            raise PopulationError("counts must be non-negative")
        empty = np.flatnonzero(c.sum(axis=0) == 0)
        if empty.size:
            raise PopulationError(f"empty {self.role} column(s): {empty.tolist()}")
        if self.role not in ("user", "group"):
            raise PopulationError(f"unknown role {self.role!r}")

        sizes = self.sizes
        if sizes is None:
            sizes = GroupSizes.ones(c.shape[1])
        elif not isinstance(sizes, GroupSizes):
            sizes = GroupSizes(np.asarray(sizes))
        if len(sizes) != c.shape[1]:
            raise PopulationError("sizes length does not match the number of columns")
        if self.role == "user" and np.any(sizes.sizes != 1):
            raise PopulationError("user populations have unit sizes")
        bad = np.flatnonzero(np.any(c % sizes.sizes[None, :] != 0, axis=0))
        if bad.size:
            raise PopulationError(
                f"group column(s) {bad.tolist()} not divisible by the group size"
            )
        object.__setattr__(self, "counts", _frozen(c))
        object.__setattr__(self, "sizes", sizes)

    @property
    def num_classes(self) -> int:
        return self.counts.shape[0]

    @property
    def num_columns(self) -> int:
        return self.counts.shape[1]

    @property
    def per_user(self) -> np.ndarray:
        """C x K matrix of the class counts held by a single member."""
        return self.counts // self.sizes.sizes[None, :]

    @classmethod
    def from_per_user(cls, per_user, sizes) -> "PopulationMatrix":
        per_user = np.asarray(per_user, dtype=np.int64)
        gs = sizes if isinstance(sizes, GroupSizes) else GroupSizes(np.asarray(sizes))
        return cls(per_user * gs.sizes[None, :], role="group", sizes=gs)


@dataclass(frozen=True)
class Topology:
    """Boolean reachability, edges as rows and users/groups as columns."""

    reach: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.reach)
        if r.ndim != 2 or r.shape[0] < 1:
            raise PopulationError("reach must be an N x K boolean matrix")
        r = r.astype(bool)
        lonely = np.flatnonzero(~r.any(axis=0))
        if lonely.size:
            raise PopulationError(f"unreachable column(s): {lonely.tolist()}")
        object.__setattr__(self, "reach", _frozen(r))

    @property
    def num_edges(self) -> int:
        return self.reach.shape[0]

    @property
    def num_columns(self) -> int:
        return self.reach.shape[1]

    def reachable(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.reach[:, k])

    @classmethod
    def full(cls, num_edges: int, k: int) -> "Topology":
        return cls(np.ones((num_edges, k), dtype=bool))

    @classmethod
    def from_encoding(cls, r) -> "Topology":
        # 0 means in range, -1 means out of range
        r = np.asarray(r)
        if not np.all(np.isin(r, (0, -1))):
            raise PopulationError("range encoding must contain only 0 and -1")
        return cls(r == 0)

    def to_encoding(self) -> np.ndarray:
        return np.where(self.reach, 0, -1).astype(np.int64)


@dataclass(frozen=True)
class GroupAssignment:
    """``alloc[o, n]`` users of group ``o`` sent to edge ``n``."""

    alloc: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.alloc)
        if a.ndim != 2:
            raise PopulationError("alloc must be an O x N matrix")
        if not np.issubdtype(a.dtype, np.integer):
            if not np.all(np.equal(np.mod(a, 1), 0)):
                raise PopulationError("alloc must be integral")
        a = a.astype(np.int64)
        if np.any(a < 0):
            raise PopulationError("alloc must be non-negative")
        object.__setattr__(self, "alloc", _frozen(a))

    @property
    def shape(self) -> tuple[int, int]:
        return self.alloc.shape


@dataclass(frozen=True)
class Objective:
    theta: float
    per_edge_distance: np.ndarray
    edge_weights: np.ndarray
    numerator: int = field(default=0, compare=False)
    denominator: int = field(default=1, compare=False)


def _check_distribution(p: np.ndarray) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    if p.ndim != 1:
        raise PopulationError("a distribution is a vector")
    if np.any(p < -DIST_ATOL) or np.any(p > 1 + DIST_ATOL):
        raise PopulationError("distribution entries must lie in [0, 1]")
    if abs(p.sum() - 1.0) > DIST_ATOL:
        raise PopulationError("distribution must sum to one")
    return p


def global_distribution(pop: PopulationMatrix) -> np.ndarray:
    totals = pop.counts.sum(axis=1)
    grand = int(totals.sum())
    if grand == 0:
        raise PopulationError("empty population")
    return totals / grand


def edge_class_counts(pop: PopulationMatrix, y: GroupAssignment) -> np.ndarray:
    """C x N integer matrix of class instances landing on each edge."""
    if y.shape[0] != pop.num_columns:
        raise PopulationError(
            f"assignment has {y.shape[0]} rows, population has {pop.num_columns} columns"
        )
    return pop.per_user @ y.alloc


def edge_distributions(pop: PopulationMatrix, y: GroupAssignment) -> np.ndarray:
    """Column ``n`` is the class distribution of edge ``n``'s virtual dataset."""
    counts = edge_class_counts(pop, y)
    sizes = counts.sum(axis=0)
    empty = np.flatnonzero(sizes == 0)
    if empty.size:
        raise EmptyEdgeError(int(empty[0]))
    return counts / sizes[None, :]


def edge_weights(pop: PopulationMatrix, y: GroupAssignment) -> np.ndarray:
    sizes = edge_class_counts(pop, y).sum(axis=0)
    total = int(sizes.sum())
    if total == 0:
        raise PopulationError("no data assigned to any edge")
    return sizes / total


def distance_l1(edge_dist, global_dist) -> float:
    a = np.asarray(edge_dist, dtype=float)
    b = np.asarray(global_dist, dtype=float)
    if a.shape != b.shape:
        raise PopulationError(f"length mismatch: {a.shape} vs {b.shape}")
    return float(np.abs(b - a).sum())


def theta_parts(edge_counts: np.ndarray) -> tuple[int, int]:
    """Exact objective as ``numerator / denominator`` from C x N edge counts.

    Global mass is taken over the assigned data only. Empty edges carry
    zero weight.
    """
    edge_counts = np.ascontiguousarray(edge_counts, dtype=np.int64)
    total = int(edge_counts.sum())
    if total == 0:
        raise PopulationError("no data assigned to any edge")
    if total >= 2**31:
        raise PopulationError("population too large for exact evaluation")
    num = theta_numerator(edge_counts)
    return num, total * total


def objective_theta(
    pop: PopulationMatrix, y: GroupAssignment, allow_empty: bool = False
) -> Objective:
    counts = edge_class_counts(pop, y)
    sizes = counts.sum(axis=0)
    if not allow_empty:
        empty = np.flatnonzero(sizes == 0)
        if empty.size:
            raise EmptyEdgeError(int(empty[0]))
    num, den = theta_parts(counts)
    total = int(sizes.sum())
    weights = sizes / total
    p = counts.sum(axis=1) / total
    dists = np.zeros(counts.shape[1])
    nz = sizes > 0
    dists[nz] = np.abs(counts[:, nz] / sizes[None, nz] - p[:, None]).sum(axis=0)
    return Objective(
        theta=num / den,
        per_edge_distance=dists,
        edge_weights=weights,
        numerator=num,
        denominator=den,
    )


@dataclass(frozen=True)
class Violation:
    constraint: str
    index: tuple[int, ...]
    detail: str


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple[Violation, ...]
    unassigned: dict[int, int]

    @property
    def feasible(self) -> bool:
        return not self.violations

    def __bool__(self) -> bool:
        return bool(self.violations)


def validate_assignment(
    y: GroupAssignment,
    sizes: GroupSizes,
    topo: Topology,
    pop: PopulationMatrix | None = None,
    equal_size: int | None = None,
) -> ValidationReport:
    """List every violated constraint; an empty report means feasible.

    ``budget`` and ``reachability`` are always checked. ``equal_size`` is
    checked when both ``pop`` and ``equal_size`` are given. Users left
    unassigned are reported separately and are not violations.
    """
    alloc = y.alloc
    out: list[Violation] = []
    if alloc.shape != (len(sizes), topo.num_edges) or topo.num_columns != len(sizes):
        out.append(
            Violation(
                "shape",
                (),
                f"alloc {alloc.shape}, sizes {len(sizes)}, topology {topo.reach.shape}",
            )
        )
        return ValidationReport(tuple(out), {})
    rows = alloc.sum(axis=1)
    unassigned: dict[int, int] = {}
    for o, (used, g) in enumerate(zip(rows, sizes.sizes)):
        if used > g:
            out.append(Violation("budget", (o,), f"group {o} sends {used} > {g} users"))
        elif used < g:
            unassigned[o] = int(g - used)
    for o, n in zip(*np.nonzero((alloc > 0) & ~topo.reach.T)):
        out.append(
            Violation(
                "reachability",
                (int(o), int(n)),
                f"group {o} assigned to out-of-range edge {n}",
            )
        )
    if pop is not None and equal_size is not None:
        edge_sizes = edge_class_counts(pop, y).sum(axis=0)
        for n in np.flatnonzero(edge_sizes != equal_size):
            out.append(
                Violation(
                    "equal_size",
                    (int(n),),
                    f"edge {n} holds {edge_sizes[n]} != {equal_size} points",
                )
            )
    return ValidationReport(tuple(out), unassigned)


@dataclass(frozen=True)
class GroupedPopulation:
    pop: PopulationMatrix
    sizes: GroupSizes
    topo: Topology
    mapping: np.ndarray  # user index -> group index


def group_users(users: PopulationMatrix, topo_users: Topology) -> GroupedPopulation:
    """Merge users sharing both their class-count column and reachability column.

    Groups are numbered by first occurrence.
    """
    if users.role != "user":
        raise PopulationError("group_users expects a user-level population")
    if topo_users.num_columns != users.num_columns:
        raise PopulationError("topology and population disagree on the number of users")
    keys: dict[tuple, int] = {}
    mapping = np.empty(users.num_columns, dtype=np.int64)
    cols: list[int] = []
    for u in range(users.num_columns):
        key = (users.counts[:, u].tobytes(), topo_users.reach[:, u].tobytes())
        g = keys.get(key)
        if g is None:
            g = keys[key] = len(cols)
            cols.append(u)
        mapping[u] = g
    sizes = np.bincount(mapping, minlength=len(cols)).astype(np.int64)
    per_user = users.counts[:, cols]
    gs = GroupSizes(sizes)
    return GroupedPopulation(
        pop=PopulationMatrix.from_per_user(per_user, gs),
        sizes=gs,
        topo=Topology(topo_users.reach[:, cols]),
        mapping=_frozen(mapping),
    )


@dataclass(frozen=True)
class UserAssignment:
    """Binary user-to-edge matrix; rows of unassigned users are all zero."""

    x: np.ndarray

    @property
    def edges(self) -> np.ndarray:
        """Edge index per user, -1 when unassigned."""
        e = np.argmax(self.x, axis=1)
        return np.where(self.x.any(axis=1), e, -1)

    @property
    def unassigned(self) -> np.ndarray:
        return np.flatnonzero(~self.x.any(axis=1))

    @classmethod
    def from_edges(cls, edges, num_edges: int) -> "UserAssignment":
        edges = np.asarray(edges, dtype=np.int64)
        x = np.zeros((edges.size, num_edges), dtype=np.int8)
        ok = edges >= 0
        x[np.flatnonzero(ok), edges[ok]] = 1
        return cls(_frozen(x))

    def as_group_assignment(self) -> GroupAssignment:
        return GroupAssignment(self.x.astype(np.int64))


def expand_assignment(y: GroupAssignment, mapping) -> UserAssignment:
    """Turn group counts into one edge per user, lowest user index first."""
    mapping = np.asarray(mapping, dtype=np.int64)
    num_groups, num_edges = y.shape
    if mapping.size and (mapping.min() < 0 or mapping.max() >= num_groups):
        raise PopulationError("mapping refers to a group outside the assignment")
    edges = np.full(mapping.size, -1, dtype=np.int64)
    for o in range(num_groups):
        members = np.flatnonzero(mapping == o)
        row = y.alloc[o]
        if row.sum() > members.size:
            raise PopulationError(
                f"group {o} has {members.size} users but {row.sum()} are assigned"
            )
        edges[members[: row.sum()]] = np.repeat(np.arange(num_edges), row)
    return UserAssignment.from_edges(edges, num_edges)


def aggregate_by_group(x: UserAssignment, mapping, num_groups: int) -> GroupAssignment:
    """Inverse of :func:`expand_assignment`: count users per (group, edge)."""
    mapping = np.asarray(mapping, dtype=np.int64)
    alloc = np.zeros((num_groups, x.x.shape[1]), dtype=np.int64)
    np.add.at(alloc, mapping, x.x.astype(np.int64))
    return GroupAssignment(alloc)
