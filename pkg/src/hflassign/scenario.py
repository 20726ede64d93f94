"""Scenario assembly and policy dispatch shared by the command line and the tests."""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from hflassign.data import (
    Partition,
    PartitionSpec,
    SynthSpec,
    generate_synthetic,
    partition_non_iid,
    samples_per_class_for,
)
from hflassign.heuristic import equal_assign
from hflassign.hfl import (
    CentralRun,
    HflRun,
    LabeledDataset,
    ModelKind,
    SimConfig,
    init_model,
    run_centralized_twin,
    run_hfl,
)
from hflassign.population import (
    GroupAssignment,
    GroupedPopulation,
    PopulationError,
    PopulationMatrix,
    Topology,
    UserAssignment,
    aggregate_by_group,
    expand_assignment,
    group_users,
    objective_theta,
    validate_assignment,
)
from hflassign.solver import (
    DEFAULT_NODE_LIMIT,
    Status,
    branch_and_bound,
    brute_force_optimal,
    random_assign,
    relax_and_round,
)

POLICIES = ("none", "random", "heuristic", "lp-round", "optimal", "oracle")


@dataclass
class PolicyResult:
    policy: str
    rho: int
    assignment: GroupAssignment
    theta: float
    status: str
    nodes: int = 0
    solve_time_ms: float = 0.0
    note: str = ""
    user_edges: np.ndarray | None = None


def _timed(fn):
    t0 = time.perf_counter()
    out = fn()
    return out, (time.perf_counter() - t0) * 1e3


def run_policy(
    policy: str,
    pop: PopulationMatrix,
    topo: Topology,
    rho: int = 0,
    seed: int = 0,
    node_limit: int = DEFAULT_NODE_LIMIT,
    initial: GroupAssignment | None = None,
) -> PolicyResult:
    """Produce one validated group assignment.

    Solvers that need the equal-size constraint fall back to the even
    split when it cannot be met, and say so in ``note``.
    """
    if policy not in POLICIES:
        raise ValueError(f"unknown policy {policy!r}; choose from {POLICIES}")
    note = ""
    nodes = 0
    status = Status.FEASIBLE.value
    if policy == "none":
        if initial is None:
            raise PopulationError("policy 'none' needs the initial placement")
        y, ms = _timed(lambda: initial)
    elif policy == "random":
        y, ms = _timed(lambda: random_assign(pop.sizes, topo, seed))
    elif policy == "heuristic":
        y, ms = _timed(lambda: equal_assign(pop, topo))
    else:
        if policy == "lp-round":
            res, ms = _timed(lambda: relax_and_round(pop, topo))
        elif policy == "optimal":
            res, ms = _timed(lambda: branch_and_bound(pop, topo, node_limit=node_limit))
        else:
            res, ms = _timed(lambda: brute_force_optimal(pop, topo))
        nodes = res.nodes_explored
        if res.assignment is None:
            y = equal_assign(pop, topo)
            note = f"{res.status.value}; fallback heuristic"
            status = res.status.value
        else:
            y = res.assignment
            status = res.status.value
            if res.info.get("equal_size_slack"):
                note = f"equal-size slack {res.info['equal_size_slack']}"
    rep = validate_assignment(y, pop.sizes, topo, pop)
    if not rep.feasible:
        raise PopulationError(f"policy {policy} produced an invalid assignment: {rep.violations}")
    obj = objective_theta(pop, y, allow_empty=True)
    empty = np.flatnonzero(obj.edge_weights == 0)
    if empty.size:
        note = "; ".join(filter(None, [note, "empty edges " + " ".join(map(str, empty))]))
    theta = obj.theta
    return PolicyResult(policy, rho, y, theta, status, nodes, ms, note)


@dataclass
class Scenario:
    synth: SynthSpec | None
    pspec: PartitionSpec
    rho: int
    train: LabeledDataset
    test: LabeledDataset
    partition: Partition
    grouped: GroupedPopulation
    initial: GroupAssignment = field(init=False)

    def __post_init__(self):
        x = UserAssignment.from_edges(self.partition.initial_edges, self.pspec.num_edges)
        self.initial = aggregate_by_group(x, self.grouped.mapping, len(self.grouped.sizes))

    def policy(self, name: str, seed: int = 0, node_limit: int = DEFAULT_NODE_LIMIT) -> PolicyResult:
        res = run_policy(name, self.grouped.pop, self.grouped.topo, self.rho, seed, node_limit, self.initial)
        res.user_edges = expand_assignment(res.assignment, self.grouped.mapping).edges
        return res


def build_scenario(synth: SynthSpec, pspec: PartitionSpec, rho: int) -> Scenario:
    """Generate data sized for the partition (when ``samples_per_class`` is 0) and group its users."""
    if synth.samples_per_class == 0:
        raise ValueError("samples_per_class must be positive")
    train, test = generate_synthetic(synth)
    part = partition_non_iid(train, pspec, rho)
    grouped = group_users(part.population, part.topology)
    return Scenario(synth, pspec, rho, train, test, part, grouped)


def sized_synth(pspec: PartitionSpec, classes: int, **kw) -> SynthSpec:
    return SynthSpec(classes=classes, samples_per_class=samples_per_class_for(pspec, classes), **kw)


@dataclass(frozen=True)
class ModelSpec:
    kind: ModelKind = ModelKind.DENSE_NET
    hidden: int = 32
    seed: int = 0

    def dims(self, d: int, C: int) -> tuple[int, ...]:
        if ModelKind(self.kind) == ModelKind.SOFTMAX_REGRESSION:
            return (d, C)
        return (d, self.hidden, C)


def train_policies(
    scenario: Scenario,
    results: list[PolicyResult],
    sim: SimConfig,
    mspec: ModelSpec = ModelSpec(),
    twin: CentralRun | None = None,
):
    """Train every assignment from the same initial weights; returns the twin and runs.

    Pass ``twin`` to reuse a centralized run across scenarios that share
    the same users (scenarios differing only in range do).
    """
    users = scenario.partition.users
    model = init_model(mspec.kind, mspec.dims(scenario.train.dim, scenario.train.num_classes), mspec.seed)
    if twin is None:
        pooled = LabeledDataset.concat(list(users))
        twin = run_centralized_twin(pooled, model, sim, scenario.pspec.num_edges, scenario.test)
    runs: list[HflRun] = []
    for res in results:
        runs.append(
            run_hfl(
                users,
                res.user_edges,
                sim,
                model,
                num_edges=scenario.pspec.num_edges,
                test=scenario.test,
                theta=res.theta,
                twin=twin,
            )
        )
    return twin, runs
