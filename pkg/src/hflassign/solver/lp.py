"""Linear models and the epigraph form of the equal-size assignment program."""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from hflassign.population import PopulationError, PopulationMatrix, Topology

LE, EQ, GE = "<=", "==", ">="


class Status(str, Enum):
    OPTIMAL = "optimal"
    FEASIBLE = "feasible"
    INFEASIBLE = "infeasible"
    NODE_LIMIT = "node_limit"
    UNBOUNDED = "unbounded"


@dataclass
class LpModel:
    """``min c.x`` subject to row constraints and variable bounds.

    Variables ``y_slice`` hold the group-edge allocation flattened row-major
    (group, edge); ``mu_slice`` the per (class, edge) absolute-deviation
    epigraph variables.
    """

    c: np.ndarray
    A: np.ndarray
    senses: tuple[str, ...]
    b: np.ndarray
    lb: np.ndarray
    ub: np.ndarray
    labels: tuple[str, ...] = ()
    y_shape: tuple[int, int] | None = None
    equal_size: int | None = None

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float)
        self.A = np.atleast_2d(np.asarray(self.A, dtype=float))
        self.b = np.asarray(self.b, dtype=float)
        self.lb = np.asarray(self.lb, dtype=float)
        self.ub = np.asarray(self.ub, dtype=float)
        n = self.c.size
        if self.A.size == 0:
            self.A = self.A.reshape(0, n)
        m = self.A.shape[0]
        if self.A.shape[1] != n or self.b.size != m or len(self.senses) != m:
            raise ValueError("inconsistent LP dimensions")
        if self.lb.size != n or self.ub.size != n:
            raise ValueError("bounds do not match the variable count")
        if any(s not in (LE, EQ, GE) for s in self.senses):
            raise ValueError("row senses must be <=, == or >=")
        if np.any(self.lb > self.ub):
            raise ValueError("lower bound above upper bound")
        if np.any(self.lb == np.inf) or np.any(self.ub == -np.inf):
            raise ValueError("bounds must admit a finite value")

    @property
    def num_vars(self) -> int:
        return self.c.size

    @property
    def num_rows(self) -> int:
        return self.A.shape[0]

    @property
    def y_slice(self) -> slice:
        size = 0 if self.y_shape is None else self.y_shape[0] * self.y_shape[1]
        return slice(0, size)

    @property
    def mu_slice(self) -> slice:
        return slice(self.y_slice.stop, self.num_vars)

    def with_bounds(self, lb, ub) -> "LpModel":
        return LpModel(
            self.c, self.A, self.senses, self.b, lb, ub, self.labels, self.y_shape, self.equal_size
        )


@dataclass
class SolveResult:
    """Outcome of a solve.

    Integer solves report ``objective_value`` as the distance objective of
    ``assignment``; relaxations report the LP objective and carry
    ``fractional=True`` with the allocation as a float matrix.
    """

    assignment: object
    objective_value: float
    status: Status
    nodes_explored: int = 0
    fractional: bool = False
    x: np.ndarray | None = None
    info: dict = field(default_factory=dict)


def equal_edge_size(pop: PopulationMatrix, num_edges: int) -> int | None:
    """Per-edge data size for a full, equal split, or None when not integral."""
    total = int(pop.counts.sum())
    return total // num_edges if total % num_edges == 0 else None


def build_epigraph_lp(pop: PopulationMatrix, topo: Topology, S: int) -> LpModel:
    """Linear program whose integer optimum is ``S`` times the best distance.

    Rows, in order: one budget row per group (users sent out <= group
    size), one equal-size row per edge, then for every (class, edge) the
    two epigraph rows ``+-((1/S) (P Y)_{c,n} - p_c) - mu_{c,n} <= 0``.
    Each ``mu`` is weighted ``S / N``, which under equal sizes equals ``S``
    times the edge's share of the data. Unreachable (group, edge) pairs are
    fixed to zero through their bounds.
    """
    if S <= 0:
        raise PopulationError("equal edge size must be positive")
    P = pop.per_user.astype(float)  # C x O
    C, O = P.shape
    N = topo.num_edges
    if topo.num_columns != O:
        raise PopulationError("topology and population disagree on the number of groups")
    G = pop.sizes.sizes.astype(float)
    p = pop.counts.sum(axis=1) / pop.counts.sum()
    ny, nmu = O * N, C * N

    def yi(o, n):
        return o * N + n

    def mi(c, n):
        return ny + c * N + n

    rows = O + N + 2 * C * N
    A = np.zeros((rows, ny + nmu))
    b = np.zeros(rows)
    senses: list[str] = []
    r = 0
    for o in range(O):
        A[r, [yi(o, n) for n in range(N)]] = 1.0
        b[r] = G[o]
        senses.append(LE)
        r += 1
    mass = P.sum(axis=0)
    for n in range(N):
        for o in range(O):
            A[r, yi(o, n)] = mass[o]
        b[r] = S
        senses.append(EQ)
        r += 1
    for sign in (1.0, -1.0):
        for c in range(C):
            for n in range(N):
                for o in range(O):
                    A[r, yi(o, n)] = sign * P[c, o] / S
                A[r, mi(c, n)] = -1.0
                b[r] = sign * p[c]
                senses.append(LE)
                r += 1

    lb = np.zeros(ny + nmu)
    ub = np.empty(ny + nmu)
    for o in range(O):
        for n in range(N):
            ub[yi(o, n)] = G[o] if topo.reach[n, o] else 0.0
    lb[ny:] = -np.inf
    ub[ny:] = np.inf
    cost = np.zeros(ny + nmu)
    cost[ny:] = S / N
    labels = tuple(f"y[{o},{n}]" for o in range(O) for n in range(N)) + tuple(
        f"mu[{c},{n}]" for c in range(C) for n in range(N)
    )
    return LpModel(cost, A, tuple(senses), b, lb, ub, labels, (O, N), S)
