"""Two-tier federated training, the pooled-data twin and per-round logs."""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from hflassign.hfl.model import LabeledDataset, Model, evaluate, gradient_arrays, loss
from hflassign.population import EmptyEdgeError

CENTRAL_STREAM = 1
USER_STREAM = 0
LOG_COLUMNS = ("round", "loss", "accuracy", "divergence", "theta", "bound")
NORMS = ("l2", "l1", "linf")


@dataclass(frozen=True)
class SimConfig:
    """Training schedule.

    ``T`` edge rounds make one cloud round and ``T_prime`` local steps make
    one edge round. ``batch_size=None`` means full-gradient steps; with a
    batch size every user draws that many samples per step (without
    replacement, capped at its dataset size) and the pooled twin draws
    ``batch_size * num_edges``.
    """

    T: int = 5
    T_prime: int = 1
    delta: float = 0.01
    rounds: int = 10
    batch_size: int | None = None
    seed: int = 0
    eval_every: int = 1
    norm: str = "l2"

    def __post_init__(self):
        if self.T < 1 or self.T_prime < 1:
            raise ValueError("T and T_prime must be at least 1")
        if not self.delta > 0:
            raise ValueError("delta must be positive")
        if self.rounds < 0:
            raise ValueError("rounds must be non-negative")
        if self.batch_size is not None and self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        if self.eval_every < 1:
            raise ValueError("eval_every must be at least 1")
        if self.norm not in NORMS:
            raise ValueError(f"norm must be one of {NORMS}")

    @property
    def full_gradient(self) -> bool:
        return self.batch_size is None

    @property
    def steps_per_round(self) -> int:
        return self.T * self.T_prime

    @property
    def total_steps(self) -> int:
        return self.rounds * self.steps_per_round


def vector_norm(v: np.ndarray, norm: str = "l2") -> float:
    if norm == "l1":
        return float(np.abs(v).sum())
    if norm == "linf":
        return float(np.abs(v).max(initial=0.0))
    return float(np.linalg.norm(v))


def aggregate(weight_list: Sequence[np.ndarray], size_list: Sequence[float]) -> np.ndarray:
    """Size-weighted average, summed in list order so results are bit-stable."""
    if len(weight_list) == 0 or len(weight_list) != len(size_list):
        raise ValueError("need matching, nonempty weight and size lists")
    sizes = np.asarray(size_list, dtype=np.float64)
    if np.any(sizes <= 0):
        raise ValueError("sizes must be positive")
    total = sizes.sum()
    out = np.zeros_like(np.asarray(weight_list[0], dtype=np.float64))
    for w, s in zip(weight_list, sizes):
        w = np.asarray(w, dtype=np.float64)
        if w.shape != out.shape:
            raise ValueError("weight vectors differ in shape")
        out += (s / total) * w
    return out


def weights_hash(w: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(w, dtype="<f8").tobytes()).hexdigest()[:16]


@dataclass(frozen=True)
class LogRow:
    round: int
    loss: float
    accuracy: float
    divergence: float
    theta: float
    bound: float
    weights_hash: str


def _fmt(v: float) -> str:
    return "" if v is None or (isinstance(v, float) and math.isnan(v)) else repr(float(v))


@dataclass
class TrainLog:
    rows: list[LogRow] = field(default_factory=list)
    final_weights: np.ndarray | None = None
    label: str = ""

    def __len__(self) -> int:
        return len(self.rows)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.rows], dtype=float)

    def with_bounds(self, bounds: Sequence[float]) -> "TrainLog":
        if len(bounds) != len(self.rows):
            raise ValueError("one bound per round is required")
        rows = [replace(r, bound=float(b)) for r, b in zip(self.rows, bounds)]
        return TrainLog(rows, self.final_weights, self.label)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(LOG_COLUMNS)
        for r in self.rows:
            writer.writerow(
                [r.round, _fmt(r.loss), _fmt(r.accuracy), _fmt(r.divergence), _fmt(r.theta), _fmt(r.bound)]
            )
        return buf.getvalue()

    def write_csv(self, path: str | Path) -> None:
        Path(path).write_text(self.to_csv())

    @staticmethod
    def read_csv(path: str | Path) -> "TrainLog":
        rows = []
        with open(path, newline="") as fh:
            for rec in csv.DictReader(fh):
                vals = {k: float(rec[k]) if rec[k] != "" else float("nan") for k in LOG_COLUMNS[1:]}
                rows.append(LogRow(int(rec["round"]), weights_hash="", **vals))
        return TrainLog(rows, label=Path(path).stem)


def save_weights(path: str | Path, model: Model) -> None:
    """Flat float64 little-endian dump plus a ``.json`` sidecar describing its shape."""
    path = Path(path)
    path.write_bytes(np.ascontiguousarray(model.weights, dtype="<f8").tobytes())
    meta = {"kind": model.kind.value, "dims": list(model.dims), "dtype": "<f8", "length": int(model.weights.size)}
    path.with_suffix(path.suffix + ".json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def load_weights(path: str | Path) -> Model:
    path = Path(path)
    meta = json.loads(path.with_suffix(path.suffix + ".json").read_text())
    w = np.frombuffer(path.read_bytes(), dtype="<f8").astype(np.float64)
    if w.size != meta["length"]:
        raise ValueError("weight file length does not match its sidecar")
    return Model(meta["kind"], tuple(meta["dims"]), w)


def _batch(data: LabeledDataset, size: int | None, rng_key: list[int]) -> tuple[np.ndarray, np.ndarray]:
    if size is None or size >= len(data):
        return data.features, data.labels
    rng = np.random.default_rng(rng_key)
    idx = np.sort(rng.permutation(len(data))[:size])
    return data.features[idx], data.labels[idx]


def _sgd_step(model: Model, w: np.ndarray, batch: tuple[np.ndarray, np.ndarray], delta: float) -> np.ndarray:
    return w - delta * gradient_arrays(model, w, *batch)


@dataclass
class CentralRun:
    """Pooled-data trajectory: ``trajectory[t]`` holds the weights after ``t`` steps."""

    trajectory: np.ndarray
    log: TrainLog


def _eval_row(model, w, train, test, m, cfg, divergence, theta) -> LogRow:
    due = m % cfg.eval_every == 0 or m == cfg.rounds
    mw = model.with_weights(w)
    return LogRow(
        round=m,
        loss=loss(mw, train) if due else float("nan"),
        accuracy=evaluate(mw, test if test is not None else train) if due else float("nan"),
        divergence=divergence,
        theta=theta,
        bound=float("nan"),
        weights_hash=weights_hash(w),
    )


def run_centralized_twin(
    data: LabeledDataset,
    model: Model,
    config: SimConfig,
    num_edges: int = 1,
    test: LabeledDataset | None = None,
    steps: int | None = None,
) -> CentralRun:
    """Plain gradient descent on the pooled data, one log row per cloud round.

    ``model`` supplies the initial weights. ``steps`` defaults to the number
    of local steps the federated schedule takes.
    """
    if len(data) == 0:
        raise ValueError("empty dataset")
    steps = config.total_steps if steps is None else steps
    batch = None if config.full_gradient else config.batch_size * num_edges
    traj = np.empty((steps + 1, model.weights.size))
    traj[0] = model.weights
    w = model.weights.copy()
    for t in range(steps):
        part = _batch(data, batch, [config.seed, CENTRAL_STREAM, t])
        w = _sgd_step(model, w, part, config.delta)
        traj[t + 1] = w
    log = TrainLog(label="centralized")
    per = config.steps_per_round
    for m in range(1, config.rounds + 1):
        if m * per > steps:
            break
        log.rows.append(_eval_row(model, traj[m * per], data, test, m, config, 0.0, 0.0))
    log.final_weights = w.copy()
    return CentralRun(traj, log)


@dataclass
class HflRun:
    log: TrainLog
    final_model: Model
    twin: CentralRun
    # per edge round, the edge models before any cloud averaging (rows = edges)
    edge_snapshots: list[np.ndarray] = field(default_factory=list)


def _edge_members(edges: np.ndarray, num_edges: int) -> list[np.ndarray]:
    members = [np.flatnonzero(edges == n) for n in range(num_edges)]
    for n, m in enumerate(members):
        if m.size == 0:
            raise EmptyEdgeError(n)
    return members


def _edge_round(model, w_edge, users, member_ids, cfg, step0) -> np.ndarray:
    if cfg.T_prime == 1:
        # every user steps once from w_edge, so the size-weighted average of
        # the local models is one step along the weighted sum of their gradients
        total = sum(len(users[u]) for u in member_ids)
        xs, ys, ws = [], [], []
        for u in member_ids:
            x, y = _batch(users[u], cfg.batch_size, [cfg.seed, USER_STREAM, int(u), step0])
            xs.append(x)
            ys.append(y)
            ws.append(np.full(y.size, len(users[u]) / (total * y.size)))
        g = gradient_arrays(model, w_edge, np.concatenate(xs), np.concatenate(ys), np.concatenate(ws))
        return w_edge - cfg.delta * g
    local = []
    for u in member_ids:
        w = w_edge.copy()
        for s in range(cfg.T_prime):
            part = _batch(users[u], cfg.batch_size, [cfg.seed, USER_STREAM, int(u), step0 + s])
            w = _sgd_step(model, w, part, cfg.delta)
        local.append(w)
    return aggregate(local, [len(users[u]) for u in member_ids])


def run_hfl(
    users: Sequence[LabeledDataset],
    edges: Sequence[int],
    config: SimConfig,
    model: Model,
    num_edges: int | None = None,
    test: LabeledDataset | None = None,
    theta: float = float("nan"),
    twin: CentralRun | None = None,
    record_snapshots: bool = False,
) -> HflRun:
    """Train across edges and the cloud, starting every node from ``model``.

    ``edges[u]`` is the edge of user ``u``. Users send their models to the
    edge after ``T_prime`` local steps, edges average by data size, and the
    cloud averages the edges every ``T`` edge rounds. Divergence is
    measured against the pooled-data twin after the same number of steps.
    """
    edges = np.asarray(edges, dtype=np.int64)
    if edges.shape != (len(users),):
        raise ValueError("one edge index per user is required")
    if np.any(edges < 0):
        raise ValueError("every user must be assigned to an edge")
    if any(len(u) == 0 for u in users):
        raise ValueError("every user needs at least one sample")
    N = int(edges.max()) + 1 if num_edges is None else num_edges
    members = _edge_members(edges, N)
    pooled = LabeledDataset.concat(list(users))
    if twin is None:
        twin = run_centralized_twin(pooled, model, config, N, test)
    edge_size = [sum(len(users[u]) for u in m) for m in members]

    w_edges = [model.weights.copy() for _ in range(N)]
    log = TrainLog(label="federated")
    snapshots: list[np.ndarray] = []
    step = 0
    for m in range(1, config.rounds + 1):
        for _ in range(config.T):
            w_edges = [_edge_round(model, w_edges[n], users, members[n], config, step) for n in range(N)]
            step += config.T_prime
            if record_snapshots:
                snapshots.append(np.array(w_edges))
        w_cloud = aggregate(w_edges, edge_size)
        w_edges = [w_cloud.copy() for _ in range(N)]
        div = vector_norm(w_cloud - twin.trajectory[step], config.norm)
        log.rows.append(_eval_row(model, w_cloud, pooled, test, m, config, div, theta))
    final = w_edges[0] if config.rounds else model.weights.copy()
    log.final_weights = final.copy()
    return HflRun(log, model.with_weights(final), twin, snapshots)


def edge_vs_virtual_deviation(
    users: Sequence[LabeledDataset],
    model: Model,
    delta: float,
    steps: int,
    T_prime: int = 1,
    edges: Sequence[int] | None = None,
) -> float:
    """Largest max-abs gap between each averaged edge model and plain descent on that edge's pooled data.

    Runs ``steps`` edge aggregations of ``T_prime`` full-gradient local
    steps each and compares after every aggregation.
    """
    edges = np.zeros(len(users), dtype=np.int64) if edges is None else np.asarray(edges)
    N = int(edges.max()) + 1
    members = _edge_members(edges, N)
    cfg = SimConfig(T=1, T_prime=T_prime, delta=delta, rounds=0)
    worst = 0.0
    for n in range(N):
        virtual = LabeledDataset.concat([users[u] for u in members[n]])
        w_fed = model.weights.copy()
        w_cen = model.weights.copy()
        for k in range(steps):
            w_fed = _edge_round(model, w_fed, users, members[n], cfg, k * T_prime)
            for _ in range(T_prime):
                w_cen = _sgd_step(model, w_cen, (virtual.features, virtual.labels), delta)
            worst = max(worst, float(np.abs(w_fed - w_cen).max()))
    return worst


def verify_lemma1(
    users: Sequence[LabeledDataset],
    model: Model,
    config: SimConfig,
    steps: int = 50,
    edges: Sequence[int] | None = None,
) -> float:
    """Deviation check for one-step edge averaging with full gradients."""
    if config.T_prime != 1 or not config.full_gradient:
        raise ValueError("the equality check needs T_prime = 1 and full gradients")
    return edge_vs_virtual_deviation(users, model, config.delta, steps, 1, edges)
