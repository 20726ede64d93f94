"""Command line harness: assignment tables, range sweeps, training curves and their summary.

Every command reads one JSON config (or a named preset), applies flag
overrides, writes CSVs into ``--out`` and records what it did in
``manifest.json``. Failures exit nonzero with a JSON error record on stderr.
"""
from __future__ import annotations

import argparse
import copy
import csv
import hashlib
import io
import json
import math
import platform
import sys
from dataclasses import dataclass, fields
from importlib import metadata
from pathlib import Path

import numpy as np

from hflassign import _kernels
from hflassign.data import (
    GroupSpec,
    PartitionSpec,
    SynthSpec,
    load_idx,
    partition_non_iid,
    random_groups,
    samples_per_class_for,
)
from hflassign.hfl import ModelKind, SimConfig, TrainLog
from hflassign.population import (
    GroupAssignment,
    GroupSizes,
    PopulationError,
    PopulationMatrix,
    Topology,
    group_users,
    validate_assignment,
)
from hflassign.scenario import (
    POLICIES,
    ModelSpec,
    PolicyResult,
    Scenario,
    build_scenario,
    run_policy,
    train_policies,
)
from hflassign.solver import DEFAULT_NODE_LIMIT, equal_edge_size

ALL_POLICIES = ["none", "random", "heuristic", "lp-round", "optimal"]

PRESETS: dict[str, dict] = {
    # five edges, two classes each, identical users: the no-reassignment distance is 1.6
    "noniid-equal": {
        "scenario": {
            "type": "partition",
            "synthetic": {"classes": 10, "feature_dim": 10},
            "partition": {"num_edges": 5, "users_per_edge": 10, "classes_per_edge": 2, "per_user_samples": 10},
        },
        "policies": ALL_POLICIES,
        "rhos": [1, 2, 5],
    },
    "fig2-iid": {
        "scenario": {
            "type": "groups",
            "groups": {"num_edges": 5, "classes": 10, "iid": True, "per_user_samples": 10},
            "group_counts": [5, 10, 15],
        },
        "policies": ALL_POLICIES,
        "node_limit": 100,
    },
    "fig2-noniid": {
        "scenario": {
            "type": "groups",
            "groups": {"num_edges": 5, "classes": 10, "iid": False, "per_user_samples": 10},
            "group_counts": [5, 10, 15],
        },
        "policies": ALL_POLICIES,
        "node_limit": 100,
    },
    "rho-sweep": {
        "scenario": {
            "type": "partition",
            "synthetic": {"classes": 10, "feature_dim": 10},
            "partition": {"num_edges": 10, "users_per_edge": 30, "classes_per_edge": 2, "per_user_samples": 20},
        },
        "policies": ["heuristic"],
        "rhos": [1, 2, 3, 4, 5, 6, 7, 8, 9, 10],
    },
    "learning": {
        "scenario": {
            "type": "partition",
            "synthetic": {"classes": 10, "feature_dim": 10, "class_mean_scale": 2.0, "noise_sigma": 1.0},
            "partition": {"num_edges": 10, "users_per_edge": 10, "classes_per_edge": 2, "per_user_samples": 20},
        },
        "runs": [
            {"policy": "none", "rho": 1},
            {"policy": "heuristic", "rho": 2},
            {"policy": "heuristic", "rho": 10},
        ],
        "sim": {"T": 30, "T_prime": 1, "delta": 1.0, "rounds": 60, "batch_size": 10},
        "model": {"kind": "dense_net", "hidden": 8},
    },
}


class ConfigError(ValueError):
    pass


@dataclass
class Config:
    scenario: dict
    policies: list
    rhos: list
    runs: list
    sim: dict
    model: dict
    seed: int = 0
    node_limit: int = DEFAULT_NODE_LIMIT

    @classmethod
    def from_dict(cls, raw: dict) -> "Config":
        known = {f.name for f in fields(cls)}
        extra = sorted(set(raw) - known - {"preset"})
        if extra:
            raise ConfigError(f"unknown config keys: {', '.join(extra)}")
        if "scenario" not in raw:
            raise ConfigError("config needs a 'scenario' section")
        cfg = cls(
            scenario=raw["scenario"],
            policies=list(raw.get("policies", [])),
            rhos=[int(r) for r in raw.get("rhos", [])],
            runs=[dict(r) for r in raw.get("runs", [])],
            sim=dict(raw.get("sim", {})),
            model=dict(raw.get("model", {})),
            seed=int(raw.get("seed", 0)),
            node_limit=int(raw.get("node_limit", DEFAULT_NODE_LIMIT)),
        )
        for p in cfg.policies + [r.get("policy") for r in cfg.runs]:
            if p not in POLICIES:
                raise ConfigError(f"unknown policy {p!r}; choose from {', '.join(POLICIES)}")
        return cfg

    def train_runs(self) -> list[dict]:
        if self.runs:
            runs = self.runs
            if self.policies:
                runs = [r for r in runs if r["policy"] in self.policies]
        else:
            runs = [{"policy": p, "rho": r} for p in self.policies for r in self.rhos]
        if not runs:
            raise ConfigError("no training runs: give 'runs' or both 'policies' and 'rhos'")
        return runs


def load_config(args) -> tuple[Config, dict]:
    if bool(args.config) == bool(args.preset):
        raise ConfigError("give exactly one of --config or --preset")
    if args.preset:
        if args.preset not in PRESETS:
            raise ConfigError(f"unknown preset {args.preset!r}; choose from {', '.join(PRESETS)}")
        raw = copy.deepcopy(PRESETS[args.preset])
        raw["preset"] = args.preset
    else:
        try:
            raw = json.loads(Path(args.config).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{args.config}: invalid JSON ({exc})") from exc
        if not isinstance(raw, dict):
            raise ConfigError("config must be a JSON object")
        if "command" in raw and "config" in raw:
            # a manifest from an earlier run replays its recorded config
            raw = raw["config"]
    if args.seed is not None:
        raw["seed"] = args.seed
    if args.rounds is not None:
        raw.setdefault("sim", {})["rounds"] = args.rounds
    if args.node_limit is not None:
        raw["node_limit"] = args.node_limit
    if args.policy:
        raw["policies"] = list(args.policy)
    return Config.from_dict(raw), raw


# ---------------------------------------------------------------- scenarios


@dataclass
class AssignCase:
    label: str
    rho: str
    pop: PopulationMatrix
    topo: Topology
    initial: GroupAssignment | None


def _dataclass_from(kind, raw: dict, seed: int, what: str):
    allowed = {f.name for f in fields(kind)} - {"seed"}
    extra = sorted(set(raw) - allowed)
    if extra:
        raise ConfigError(f"unknown {what} keys: {', '.join(extra)}")
    return kind(**raw, seed=seed)


def _partition_scenario(cfg: Config, rho: int) -> Scenario:
    sc = cfg.scenario
    pspec = _dataclass_from(PartitionSpec, sc.get("partition", {}), cfg.seed, "partition")
    if not 1 <= rho <= pspec.num_edges:
        raise ConfigError(f"rho {rho} outside [1, {pspec.num_edges}]")
    if "idx" in sc:
        idx = sc["idx"]
        train = load_idx(idx["images"], idx["labels"], idx.get("limit"), idx.get("num_classes"))
        if "test_images" in idx:
            test = load_idx(idx["test_images"], idx["test_labels"], idx.get("test_limit"), train.num_classes)
        else:
            test = train
        part = partition_non_iid(train, pspec, rho)
        return Scenario(None, pspec, rho, train, test, part, group_users(part.population, part.topology))
    syn = dict(sc.get("synthetic", {}))
    classes = int(syn.get("classes", SynthSpec.classes))
    syn.setdefault("samples_per_class", samples_per_class_for(pspec, classes))
    synth = _dataclass_from(SynthSpec, syn, cfg.seed, "synthetic")
    return build_scenario(synth, pspec, rho)


def _explicit_population(raw: dict) -> AssignCase:
    try:
        C, N, groups = int(raw["classes"]), int(raw["edges"]), raw["groups"]
        per_user = np.array([g["counts"] for g in groups], dtype=np.int64).T.reshape(C, len(groups))
        sizes = np.array([g["size"] for g in groups], dtype=np.int64)
        reach = np.zeros((N, len(groups)), dtype=bool)
        for o, g in enumerate(groups):
            reach[np.asarray(g["reachable_edges"], dtype=np.int64), o] = True
    except (KeyError, TypeError, IndexError, ValueError) as exc:
        raise ConfigError(f"malformed population: {exc}") from exc
    pop = PopulationMatrix.from_per_user(per_user, GroupSizes(sizes))
    topo = Topology(reach)
    initial = None
    if all("initial_edge" in g for g in groups):
        alloc = np.zeros((len(groups), N), dtype=np.int64)
        for o, g in enumerate(groups):
            alloc[o, int(g["initial_edge"])] = sizes[o]
        initial = GroupAssignment(alloc)
    rho = int(reach.sum(axis=0).max())
    return AssignCase("population", str(rho), pop, topo, initial)


def assign_cases(cfg: Config) -> list[AssignCase]:
    kind = cfg.scenario.get("type")
    if kind == "partition":
        if not cfg.rhos:
            raise ConfigError("partition scenarios need 'rhos'")
        out = []
        for rho in cfg.rhos:
            s = _partition_scenario(cfg, rho)
            out.append(AssignCase(f"rho={rho}", str(rho), s.grouped.pop, s.grouped.topo, s.initial))
        return out
    if kind == "groups":
        base = dict(cfg.scenario.get("groups", {}))
        counts = cfg.scenario.get("group_counts", [base.pop("num_groups", GroupSpec.num_groups)])
        out = []
        for k in counts:
            spec = _dataclass_from(GroupSpec, {**base, "num_groups": int(k)}, cfg.seed, "groups")
            inst = random_groups(spec)
            alloc = np.zeros((spec.num_groups, spec.num_edges), dtype=np.int64)
            alloc[np.arange(spec.num_groups), inst.initial_edges] = inst.population.sizes.sizes
            rho = spec.num_edges if spec.rho is None else spec.rho
            out.append(AssignCase(f"groups={k}", str(rho), inst.population, inst.topology, GroupAssignment(alloc)))
        return out
    if kind == "population":
        return [_explicit_population(cfg.scenario.get("population", {}))]
    raise ConfigError(f"unknown scenario type {kind!r}; choose partition, groups or population")


# ---------------------------------------------------------------- output


def _num(x: float) -> str:
    return "" if isinstance(x, float) and math.isnan(x) else repr(float(x))


def _csv_text(header: list[str], rows: list[list], comments: list[str] = ()) -> str:
    buf = io.StringIO()
    for c in comments:
        buf.write(f"# {c}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


class Outputs:
    def __init__(self, out: Path):
        self.out = out
        self.files: dict[str, str] = {}
        out.mkdir(parents=True, exist_ok=True)

    def write(self, name: str, text: str) -> None:
        (self.out / name).write_text(text)
        self.files[name] = hashlib.sha256(text.encode()).hexdigest()

    def manifest(self, command: str, raw: dict, cfg: Config | None, timing: bool) -> None:
        try:
            version = metadata.version("hflassign")
        except metadata.PackageNotFoundError:
            version = "unknown"
        man = {
            "command": command,
            "config": raw,
            "seed": cfg.seed if cfg is not None else None,
            "timing": timing,
            "versions": {"hflassign": version, "numpy": np.__version__, "python": platform.python_version()},
            "kernels": _kernels.BACKEND,
            "outputs": dict(sorted(self.files.items())),
        }
        (self.out / "manifest.json").write_text(json.dumps(man, indent=2, sort_keys=True) + "\n")


ASSIGN_COLUMNS = ["scenario", "policy", "rho", "theta", "solve_time_ms", "nodes", "status", "equal_size", "note"]


def _equal_size_ok(res: PolicyResult, case: AssignCase) -> str:
    S = equal_edge_size(case.pop, case.topo.num_edges)
    if S is None:
        return "n/a"
    rep = validate_assignment(res.assignment, case.pop.sizes, case.topo, case.pop, S)
    return "yes" if rep.feasible else "no"


def cmd_assign(cfg: Config, outs: Outputs, timing: bool) -> None:
    if not cfg.policies:
        raise ConfigError("assign needs at least one policy")
    rows = []
    for case in assign_cases(cfg):
        for policy in cfg.policies:
            res = run_policy(policy, case.pop, case.topo, int(case.rho), cfg.seed, cfg.node_limit, case.initial)
            rows.append(
                [
                    case.label,
                    policy,
                    case.rho,
                    _num(res.theta),
                    f"{res.solve_time_ms:.3f}" if timing else "",
                    res.nodes,
                    res.status,
                    _equal_size_ok(res, case),
                    res.note,
                ]
            )
    outs.write("assign.csv", _csv_text(ASSIGN_COLUMNS, rows))


def cmd_rho_sweep(cfg: Config, outs: Outputs, timing: bool) -> None:
    if cfg.scenario.get("type") != "partition":
        raise ConfigError("rho-sweep needs a partition scenario")
    if not cfg.rhos:
        raise ConfigError("rho-sweep needs 'rhos'")
    policy = cfg.policies[0] if cfg.policies else "heuristic"
    rows = []
    for rho in cfg.rhos:
        s = _partition_scenario(cfg, rho)
        res = run_policy(policy, s.grouped.pop, s.grouped.topo, rho, cfg.seed, cfg.node_limit, s.initial)
        rows.append([rho, _num(res.theta)])
    outs.write("rho-sweep.csv", _csv_text(["rho", "theta"], rows))


def sim_config(cfg: Config) -> SimConfig:
    allowed = {f.name for f in fields(SimConfig)} - {"seed"}
    extra = sorted(set(cfg.sim) - allowed)
    if extra:
        raise ConfigError(f"unknown sim keys: {', '.join(extra)}")
    return SimConfig(**cfg.sim, seed=cfg.seed)


def model_spec(cfg: Config) -> ModelSpec:
    raw = dict(cfg.model)
    extra = sorted(set(raw) - {"kind", "hidden"})
    if extra:
        raise ConfigError(f"unknown model keys: {', '.join(extra)}")
    kind = ModelKind(raw.get("kind", ModelKind.DENSE_NET.value))
    return ModelSpec(kind=kind, hidden=int(raw.get("hidden", ModelSpec.hidden)), seed=cfg.seed)


def cmd_train(cfg: Config, outs: Outputs, timing: bool) -> None:
    if cfg.scenario.get("type") != "partition":
        raise ConfigError("train needs a partition scenario")
    sim = sim_config(cfg)
    mspec = model_spec(cfg)
    runs = cfg.train_runs()
    twin = None
    records = []
    scenarios: dict[int, Scenario] = {}
    for spec in runs:
        rho = int(spec["rho"])
        if rho not in scenarios:
            scenarios[rho] = _partition_scenario(cfg, rho)
        sc = scenarios[rho]
        res = sc.policy(spec["policy"], cfg.seed, cfg.node_limit)
        twin, trained = train_policies(sc, [res], sim, mspec, twin)
        log = trained[0].log
        name = f"{spec['policy']}_rho{rho}.csv"
        outs.write(name, log.to_csv())
        acc = log.column("accuracy")
        records.append(
            {
                "policy": spec["policy"],
                "rho": rho,
                "theta": res.theta,
                "file": name,
                "final_accuracy": float(acc[-1]) if acc.size else None,
                "divergence_area": float(np.nansum(log.column("divergence"))),
                "note": res.note,
            }
        )
    outs.write("centralized.csv", twin.log.to_csv())
    body = {"rounds": sim.rounds, "centralized": "centralized.csv", "runs": records}
    outs.write("runs.json", json.dumps(body, indent=2, sort_keys=True) + "\n")


SUMMARY_HEADER = [
    "acc_improvement_pct = 100 * (final accuracy - baseline final accuracy) / baseline final accuracy",
    "speed_improvement_pct = 100 * (1 - target_round / total_rounds)",
    "target_round = first round whose accuracy reaches the baseline's final accuracy; n/a if never",
    "baseline = the first run with policy none",
]
SUMMARY_COLUMNS = [
    "rho",
    "acc_improvement_pct",
    "speed_improvement_pct",
    "policy",
    "baseline_final_accuracy",
    "final_accuracy",
    "target_round",
    "total_rounds",
]


@dataclass
class Improvement:
    acc_pct: float
    speed_pct: float | None
    target_round: int | None
    baseline_final: float
    final: float


def improvement(baseline: TrainLog, run: TrainLog) -> Improvement:
    base = baseline.column("accuracy")
    acc = run.column("accuracy")
    rounds = run.column("round").astype(int)
    if base.size == 0 or acc.size == 0:
        raise ConfigError("empty training log")
    if math.isnan(base[-1]) or math.isnan(acc[-1]):
        raise ConfigError("final round carries no accuracy")
    target = base[-1]
    hit = np.flatnonzero(acc >= target)
    total = int(rounds[-1])
    if hit.size:
        r = int(rounds[hit[0]])
        speed = 100.0 * (1.0 - r / total)
    else:
        r, speed = None, None
    return Improvement(100.0 * (acc[-1] - target) / target, speed, r, float(target), float(acc[-1]))


def cmd_summary(runs_dir: Path, outs: Outputs) -> None:
    path = runs_dir / "runs.json"
    if not path.exists():
        raise ConfigError(f"{path} not found; run 'train' first")
    body = json.loads(path.read_text())
    runs = body["runs"]
    base = next((r for r in runs if r["policy"] == "none"), None)
    if base is None:
        raise ConfigError("summary needs a run with policy none as the baseline")
    others = [r for r in runs if r is not base]
    if not others:
        raise ConfigError("summary needs at least one run besides the baseline")
    base_log = TrainLog.read_csv(runs_dir / base["file"])
    rows = []
    for r in others:
        imp = improvement(base_log, TrainLog.read_csv(runs_dir / r["file"]))
        rows.append(
            [
                r["rho"],
                f"{imp.acc_pct:.4f}",
                "n/a" if imp.speed_pct is None else f"{imp.speed_pct:.4f}",
                r["policy"],
                _num(imp.baseline_final),
                _num(imp.final),
                "n/a" if imp.target_round is None else imp.target_round,
                body["rounds"],
            ]
        )
    outs.write("summary.csv", _csv_text(SUMMARY_COLUMNS, rows, SUMMARY_HEADER))


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hflassign", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name, helptext in [
        ("assign", "objective table for each policy and scenario"),
        ("train", "hierarchical training curves per policy plus the centralized run"),
        ("rho-sweep", "distance after reassignment for each communication range"),
    ]:
        c = sub.add_parser(name, help=helptext)
        src = c.add_mutually_exclusive_group()
        src.add_argument("--config", help="JSON experiment file")
        src.add_argument("--preset", help=f"built-in experiment: {', '.join(PRESETS)}")
        c.add_argument("--out", required=True, help="output directory")
        c.add_argument("--seed", type=int)
        c.add_argument("--rounds", type=int)
        c.add_argument("--node-limit", type=int)
        c.add_argument("--policy", action="append", help="restrict to this policy (repeatable)")
        c.add_argument("--timing", action="store_true", help="record solver wall time (not reproducible)")
    s = sub.add_parser("summary", help="accuracy and speed improvement over the baseline run")
    s.add_argument("--from", dest="runs_dir", required=True, help="output directory of 'train'")
    s.add_argument("--out", required=True)
    return p


COMMANDS = {"assign": cmd_assign, "train": cmd_train, "rho-sweep": cmd_rho_sweep}


def _fail(kind: str, exc: BaseException, code: int) -> int:
    sys.stderr.write(json.dumps({"error": kind, "type": type(exc).__name__, "message": str(exc)}) + "\n")
    return code


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    outs = Outputs(Path(args.out))
    try:
        if args.command == "summary":
            cmd_summary(Path(args.runs_dir), outs)
            outs.manifest("summary", {"from": str(args.runs_dir)}, None, False)
        else:
            cfg, raw = load_config(args)
            COMMANDS[args.command](cfg, outs, args.timing)
            outs.manifest(args.command, raw, cfg, args.timing)
    except (ConfigError, PopulationError, ValueError, KeyError, OSError) as exc:
        return _fail("invalid input" if not isinstance(exc, OSError) else "io", exc, 1)
    return 0


if __name__ == "__main__":
    sys.exit(main())
