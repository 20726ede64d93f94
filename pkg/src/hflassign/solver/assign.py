"""Integer assignment solvers: exhaustive oracle, branch and bound, LP rounding, random."""
from __future__ import annotations

import heapq
import math
from fractions import Fraction

import numpy as np

from hflassign import _kernels
from hflassign.heuristic import equal_assign
from hflassign.population import (
    GroupAssignment,
    GroupSizes,
    PopulationError,
    PopulationMatrix,
    Topology,
    edge_class_counts,
    objective_theta,
    theta_parts,
    validate_assignment,
)
from hflassign.solver.lp import SolveResult, Status, build_epigraph_lp, equal_edge_size
from hflassign.solver.simplex import simplex_solve

BRUTE_FORCE_LIMIT = 10**7
DEFAULT_NODE_LIMIT = 10**5
INT_TOL = 1e-6


class SearchSpaceTooLarge(PopulationError):
    def __init__(self, size: int, limit: int):
        super().__init__(f"search space of {size} assignments exceeds the limit of {limit}")
        self.size = size


def _compositions(total: int, parts: int):
    """All ways to write ``total`` as an ordered sum of ``parts`` naturals, lexicographic."""
    if parts == 1:
        yield (total,)
        return
    for first in range(total + 1):
        for rest in _compositions(total - first, parts - 1):
            yield (first,) + rest


def search_space_size(sizes: GroupSizes, topo: Topology) -> int:
    out = 1
    for o, g in enumerate(sizes.sizes):
        rho = int(topo.reach[:, o].sum())
        out *= math.comb(int(g) + rho - 1, rho - 1)
    return out


def _integer_result(pop, y: GroupAssignment, status: Status, nodes: int, **info) -> SolveResult:
    obj = objective_theta(pop, y, allow_empty=True)
    info.setdefault("numerator", obj.numerator)
    info.setdefault("denominator", obj.denominator)
    return SolveResult(
        assignment=y, objective_value=obj.theta, status=status, nodes_explored=nodes, info=info
    )


def brute_force_optimal(
    pop: PopulationMatrix,
    topo: Topology,
    equal_size: int | None = None,
    limit: int = BRUTE_FORCE_LIMIT,
) -> SolveResult:
    """Enumerate every full assignment and keep the smallest distance.

    With ``equal_size`` only assignments giving every edge exactly that
    many data points are considered.
    """
    sizes = pop.sizes
    space = search_space_size(sizes, topo)
    if space > limit:
        raise SearchSpaceTooLarge(space, limit)
    C, O = pop.num_classes, pop.num_columns
    N = topo.num_edges
    per_user = pop.per_user
    rows, allocs, offsets = [], [], [0]
    for o in range(O):
        edges = topo.reachable(o)
        for comp in _compositions(int(sizes.sizes[o]), edges.size):
            a = np.zeros(N, dtype=np.int64)
            a[edges] = comp
            allocs.append(a)
            rows.append(np.outer(per_user[:, o], a).ravel())
        offsets.append(len(rows))
    best, choice, leaves, feasible = _kernels.enumerate_best(
        np.asarray(rows, dtype=np.int64),
        np.asarray(offsets, dtype=np.int64),
        C,
        N,
        -1 if equal_size is None else int(equal_size),
    )
    if best < 0:
        return SolveResult(
            assignment=None,
            objective_value=float("nan"),
            status=Status.INFEASIBLE,
            nodes_explored=int(leaves),
            info={"leaves": int(leaves), "feasible_leaves": 0},
        )
    alloc = np.array([allocs[offsets[o] + choice[o]] for o in range(O)], dtype=np.int64)
    return _integer_result(
        pop,
        GroupAssignment(alloc),
        Status.OPTIMAL,
        int(leaves),
        leaves=int(leaves),
        feasible_leaves=int(feasible),
    )


def _exact_value(pop, alloc: np.ndarray) -> tuple[int, int]:
    return theta_parts(pop.per_user @ alloc)


def _p1_feasible(pop, topo, alloc: np.ndarray, S: int) -> bool:
    rep = validate_assignment(GroupAssignment(alloc), pop.sizes, topo, pop, S)
    return rep.feasible


def relax_and_round(
    pop: PopulationMatrix, topo: Topology, S: int | None = None, lp: SolveResult | None = None
) -> SolveResult:
    """Solve the LP relaxation, floor it, then greedily place the dropped users.

    Each dropped user goes to the reachable cell giving the smallest
    distance afterwards (ties: lowest group, then lowest edge), preferring
    edges that stay within the equal size. Every user ends up assigned;
    ``info["equal_size_slack"]`` is the largest deviation from the equal
    size that the repair had to accept.
    """
    if S is None:
        S = equal_edge_size(pop, topo.num_edges)
        if S is None:
            return SolveResult(None, float("nan"), Status.INFEASIBLE, info={"reason": "no equal size"})
    if lp is None:
        lp = simplex_solve(build_epigraph_lp(pop, topo, S))
    if lp.status != Status.OPTIMAL:
        return SolveResult(None, float("nan"), Status.INFEASIBLE, info={"reason": "LP infeasible"})
    y = np.floor(np.asarray(lp.assignment) + INT_TOL).astype(np.int64)
    y = np.clip(y, 0, None)
    alloc = _repair(pop, topo, y, S)
    slack = int(np.abs(edge_class_counts(pop, GroupAssignment(alloc)).sum(axis=0) - S).max())
    res = _integer_result(
        pop,
        GroupAssignment(alloc),
        Status.FEASIBLE,
        1,
        equal_size_slack=slack,
        lp_bound=lp.objective_value,
    )
    return res


def _repair(pop, topo, y: np.ndarray, S: int) -> np.ndarray:
    per_user = pop.per_user
    mass = per_user.sum(axis=0)
    G = pop.sizes.sizes
    counts = per_user @ y
    remaining = G - y.sum(axis=1)
    if np.any(remaining < 0):
        # rounding never adds users, but guard against an over-budget LP point
        raise PopulationError("relaxation exceeds a group budget")
    while remaining.sum() > 0:
        sizes = counts.sum(axis=0)
        cells = [
            (o, n)
            for o in np.flatnonzero(remaining > 0)
            for n in topo.reachable(o)
        ]
        within = [(o, n) for (o, n) in cells if sizes[n] + mass[o] <= S]
        best_val, best_cell = None, None
        for o, n in within or cells:
            counts[:, n] += per_user[:, o]
            num, den = theta_parts(counts)
            counts[:, n] -= per_user[:, o]
            val = Fraction(num, den)
            if best_val is None or val < best_val:
                best_val, best_cell = val, (o, n)
        o, n = best_cell
        y[o, n] += 1
        counts[:, n] += per_user[:, o]
        remaining[o] -= 1
    return y


def branch_and_bound(
    pop: PopulationMatrix,
    topo: Topology,
    S: int | None = None,
    node_limit: int = DEFAULT_NODE_LIMIT,
) -> SolveResult:
    """Best-bound branch and bound on the equal-size program, LP bounds at every node.

    Branches on the most fractional allocation variable (ties: lowest
    index). The incumbent starts from the even split when that already
    satisfies the equal size, and from the rounded root relaxation.
    ``nodes_explored`` counts LP solves.
    """
    if node_limit < 1:
        raise ValueError("node_limit must be at least 1")
    if S is None:
        S = equal_edge_size(pop, topo.num_edges)
        if S is None:
            return SolveResult(None, float("nan"), Status.INFEASIBLE, info={"reason": "no equal size"})
    N = topo.num_edges
    model = build_epigraph_lp(pop, topo, S)
    O = pop.num_columns
    ny = O * N
    # integer solutions take values that are multiples of this in LP units
    quantum = 1.0 / (N * N * S)
    total = int(pop.counts.sum())
    to_lp = S / (total * total)

    inc_alloc: np.ndarray | None = None
    inc_num: int | None = None
    inc_source = ""

    def offer(alloc: np.ndarray, source: str):
        nonlocal inc_alloc, inc_num, inc_source
        if not _p1_feasible(pop, topo, alloc, S):
            return
        num, _ = _exact_value(pop, alloc)
        if inc_num is None or num < inc_num:
            inc_alloc, inc_num, inc_source = alloc.copy(), num, source

    even = equal_assign(pop, topo)
    offer(np.asarray(even.alloc), "equal_assign")

    root = simplex_solve(model)
    nodes = 1
    if root.status != Status.OPTIMAL:
        return SolveResult(None, float("nan"), Status.INFEASIBLE, nodes, info={"reason": "root LP infeasible"})
    root_round = relax_and_round(pop, topo, S, lp=root)
    offer(np.asarray(root_round.assignment.alloc), "root_rounding")

    def pruned(bound: float) -> bool:
        return inc_num is not None and bound > inc_num * to_lp - quantum / 2

    heap: list = []
    seq = 0
    heapq.heappush(heap, (root.objective_value, seq, model.lb, model.ub, root))
    limit_hit = False
    while heap:
        bound, _, lb, ub, sol = heapq.heappop(heap)
        if pruned(bound):
            continue
        y = sol.x[:ny]
        frac = np.abs(y - np.round(y))
        if frac.max(initial=0.0) <= INT_TOL:
            offer(np.round(y).astype(np.int64).reshape(O, N), "branch")
            continue
        j = int(np.argmax(frac))
        children = []
        down_ub = ub.copy()
        down_ub[j] = math.floor(y[j])
        children.append((lb, down_ub))
        up_lb = lb.copy()
        up_lb[j] = math.ceil(y[j])
        children.append((up_lb, ub))
        for clb, cub in children:
            if nodes >= node_limit:
                limit_hit = True
                break
            child = simplex_solve(model.with_bounds(clb, cub))
            nodes += 1
            if child.status != Status.OPTIMAL or pruned(child.objective_value):
                continue
            seq += 1
            heapq.heappush(heap, (child.objective_value, seq, clb, cub, child))
        if limit_hit:
            break

    if inc_alloc is None:
        status = Status.NODE_LIMIT if limit_hit else Status.INFEASIBLE
        if status == Status.INFEASIBLE:
            return SolveResult(None, float("nan"), status, nodes, info={"reason": "no integer point"})
        fallback = root_round.assignment
        return _integer_result(
            pop, fallback, status, nodes, incumbent="none", equal_size_slack=root_round.info["equal_size_slack"]
        )
    status = Status.NODE_LIMIT if limit_hit else Status.OPTIMAL
    return _integer_result(
        pop,
        GroupAssignment(inc_alloc),
        status,
        nodes,
        incumbent=inc_source,
        lp_bound=root.objective_value,
        equal_size=S,
    )


def random_assign(sizes: GroupSizes, topo: Topology, seed: int) -> GroupAssignment:
    """Send each user to one of its reachable edges uniformly at random."""
    if isinstance(sizes, PopulationMatrix):
        sizes = sizes.sizes
    rng = np.random.default_rng(seed)
    alloc = np.zeros((len(sizes), topo.num_edges), dtype=np.int64)
    for o, g in enumerate(sizes.sizes):
        edges = topo.reachable(o)
        picks = rng.integers(0, edges.size, size=int(g))
        np.add.at(alloc[o], edges[picks], 1)
    return GroupAssignment(alloc)
