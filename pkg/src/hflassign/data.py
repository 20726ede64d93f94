"""Synthetic Gaussian classes, label-skewed partitions over edges, and IDX ingestion."""
from __future__ import annotations

import csv
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from hflassign.hfl.model import LabeledDataset
from hflassign.population import GroupSizes, PopulationError, PopulationMatrix, Topology

TEST_FRACTION_DENOM = 5  # one sample in five goes to the test split


@dataclass(frozen=True)
class SynthSpec:
    classes: int = 10
    feature_dim: int = 10
    samples_per_class: int = 100
    class_mean_scale: float = 1.0
    noise_sigma: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.classes < 2 or self.feature_dim < 1 or self.samples_per_class < 1:
            raise ValueError("classes >= 2, feature_dim >= 1 and samples_per_class >= 1 are required")
        if self.classes > 2 * self.feature_dim:
            raise ValueError("class means need classes <= 2 * feature_dim")
        if not self.noise_sigma > 0:
            raise ValueError("noise_sigma must be positive")


@dataclass(frozen=True)
class PartitionSpec:
    num_edges: int = 10
    users_per_edge: int = 10
    classes_per_edge: int = 2
    per_user_samples: int = 20
    seed: int = 0

    def __post_init__(self):
        if min(self.num_edges, self.users_per_edge, self.classes_per_edge, self.per_user_samples) < 1:
            raise ValueError("partition sizes must be positive")
        if self.per_user_samples % self.classes_per_edge:
            raise ValueError("per_user_samples must be divisible by classes_per_edge")

    def edge_classes(self, n: int, num_classes: int) -> list[int]:
        k = self.classes_per_edge
        return [(n * k + j) % num_classes for j in range(k)]

    def class_demand(self, num_classes: int) -> np.ndarray:
        """Training samples each class must supply."""
        if self.classes_per_edge > num_classes:
            raise ValueError("classes_per_edge exceeds the number of classes")
        per_class = self.users_per_edge * (self.per_user_samples // self.classes_per_edge)
        need = np.zeros(num_classes, dtype=np.int64)
        for n in range(self.num_edges):
            for c in self.edge_classes(n, num_classes):
                need[c] += per_class
        return need


def class_means(spec: SynthSpec) -> np.ndarray:
    """Class ``i`` sits at ``+-scale`` along axis ``i mod d`` (minus once the axes run out)."""
    mu = np.zeros((spec.classes, spec.feature_dim))
    for i in range(spec.classes):
        mu[i, i % spec.feature_dim] = spec.class_mean_scale * (1.0 if i < spec.feature_dim else -1.0)
    return mu


def split_sizes(n: int) -> tuple[int, int]:
    test = n // TEST_FRACTION_DENOM
    return n - test, test


def generate_synthetic(spec: SynthSpec) -> tuple[LabeledDataset, LabeledDataset]:
    """Gaussian samples around fixed class means, split per class into train and test."""
    rng = np.random.default_rng(spec.seed)
    mu = class_means(spec)
    tr_x, tr_y, te_x, te_y = [], [], [], []
    n_train, _ = split_sizes(spec.samples_per_class)
    for i in range(spec.classes):
        x = mu[i] + spec.noise_sigma * rng.standard_normal((spec.samples_per_class, spec.feature_dim))
        x = x[rng.permutation(spec.samples_per_class)]
        tr_x.append(x[:n_train])
        te_x.append(x[n_train:])
        tr_y.append(np.full(n_train, i))
        te_y.append(np.full(spec.samples_per_class - n_train, i))
    train = LabeledDataset(np.concatenate(tr_x), np.concatenate(tr_y), spec.classes)
    test = LabeledDataset(np.concatenate(te_x), np.concatenate(te_y), spec.classes)
    return train, test


def samples_per_class_for(pspec: PartitionSpec, num_classes: int) -> int:
    """Smallest per-class sample count whose training split covers the partition's demand."""
    need = int(pspec.class_demand(num_classes).max())
    n = need
    while split_sizes(n)[0] < need:
        n += 1
    return n


@dataclass
class Partition:
    users: list[LabeledDataset]
    population: PopulationMatrix
    topology: Topology
    initial_edges: np.ndarray
    source_index: list[np.ndarray]
    unused: np.ndarray
    rho: int

    @property
    def num_edges(self) -> int:
        return self.topology.num_edges


def ring_topology(initial_edges: np.ndarray, num_edges: int, rho: int) -> Topology:
    """A user starting at edge ``n`` reaches edges ``n, n+1, ..., n+rho-1`` (mod N)."""
    if not 1 <= rho <= num_edges:
        raise ValueError("rho must lie in [1, num_edges]")
    reach = np.zeros((num_edges, initial_edges.size), dtype=bool)
    for u, n in enumerate(initial_edges):
        reach[(n + np.arange(rho)) % num_edges, u] = True
    return Topology(reach)


def partition_non_iid(dataset: LabeledDataset, pspec: PartitionSpec, rho: int = 1) -> Partition:
    """Deal label-skewed user datasets out to edges.

    Users are numbered edge by edge. Every user of edge ``n`` holds an equal
    share of each of the edge's classes, drawn without replacement from a
    seeded shuffle of that class's samples.
    """
    C = dataset.num_classes
    need = pspec.class_demand(C)
    have = dataset.class_counts()
    short = np.flatnonzero(have < need)
    if short.size:
        c = int(short[0])
        raise PopulationError(f"class {c} needs {int(need[c])} samples but only {int(have[c])} exist")
    rng = np.random.default_rng(pspec.seed)
    pools = [rng.permutation(np.flatnonzero(dataset.labels == c)) for c in range(C)]
    cursor = np.zeros(C, dtype=np.int64)
    share = pspec.per_user_samples // pspec.classes_per_edge
    users, index, initial = [], [], []
    for n in range(pspec.num_edges):
        cls = pspec.edge_classes(n, C)
        for _ in range(pspec.users_per_edge):
            idx = []
            for c in cls:
                idx.append(pools[c][cursor[c] : cursor[c] + share])
                cursor[c] += share
            idx = np.sort(np.concatenate(idx))
            index.append(idx)
            users.append(dataset.subset(idx))
            initial.append(n)
    unused = np.sort(np.concatenate([pools[c][cursor[c] :] for c in range(C)]))
    counts = np.stack([u.class_counts() for u in users], axis=1)
    initial = np.asarray(initial, dtype=np.int64)
    return Partition(
        users=users,
        population=PopulationMatrix(counts, "user"),
        topology=ring_topology(initial, pspec.num_edges, rho),
        initial_edges=initial,
        source_index=index,
        unused=unused,
        rho=rho,
    )


class IdxFormatError(ValueError):
    pass


def _read_idx(path: Path, magic: int) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < 4:
        raise IdxFormatError(f"{path}: truncated header")
    (got,) = struct.unpack(">I", raw[:4])
    if got != magic:
        raise IdxFormatError(f"{path}: bad magic 0x{got:08x}, expected 0x{magic:08x}")
    ndim = magic & 0xFF
    head = 4 + 4 * ndim
    if len(raw) < head:
        raise IdxFormatError(f"{path}: truncated header")
    dims = struct.unpack(f">{ndim}I", raw[4:head])
    size = int(np.prod(dims))
    if len(raw) - head < size:
        raise IdxFormatError(f"{path}: truncated data, expected {size} bytes after the header")
    return np.frombuffer(raw, dtype=np.uint8, count=size, offset=head).reshape(dims)


def load_idx(
    images_path: str | Path,
    labels_path: str | Path,
    limit: int | None = None,
    num_classes: int | None = None,
) -> LabeledDataset:
    """Read unsigned-byte IDX images and labels; pixels are scaled to [0, 1]."""
    images = _read_idx(Path(images_path), 0x00000803)
    labels = _read_idx(Path(labels_path), 0x00000801)
    if images.shape[0] != labels.shape[0]:
        raise IdxFormatError(f"count mismatch: {images.shape[0]} images, {labels.shape[0]} labels")
    if limit is not None:
        images, labels = images[:limit], labels[:limit]
    x = images.reshape(images.shape[0], -1).astype(np.float64) / 255.0
    y = labels.astype(np.int64)
    if num_classes is None:
        num_classes = max(int(y.max(initial=0)) + 1, 2)
    return LabeledDataset(x, y, num_classes)


def write_dataset_csv(data: LabeledDataset, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["label"] + [f"f{j}" for j in range(data.dim)])
        for y, x in zip(data.labels, data.features):
            w.writerow([int(y)] + [repr(float(v)) for v in x])


@dataclass(frozen=True)
class GroupSpec:
    """Randomly sized groups of identical users, for assignment-only studies.

    Every user holds ``per_user_samples`` samples whose classes are drawn
    uniformly from the group's allowed classes: all of them when ``iid``,
    otherwise the ``classes_per_group`` block matching its initial edge.
    """

    num_groups: int = 10
    num_edges: int = 5
    classes: int = 10
    min_size: int = 1
    max_size: int = 10
    per_user_samples: int = 10
    iid: bool = True
    classes_per_group: int = 2
    rho: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.num_groups < 1 or self.num_edges < 1 or self.per_user_samples < 1:
            raise ValueError("num_groups, num_edges and per_user_samples must be positive")
        if not 1 <= self.min_size <= self.max_size:
            raise ValueError("group sizes need 1 <= min_size <= max_size")
        if self.num_groups * self.max_size < self.num_edges:
            raise ValueError("not enough users to give every edge one")
        if not self.iid and self.classes_per_group * self.num_edges > self.classes:
            raise ValueError("non-iid blocks need classes_per_group * num_edges <= classes")


@dataclass
class GroupInstance:
    population: PopulationMatrix
    topology: Topology
    initial_edges: np.ndarray  # per group


def random_groups(spec: GroupSpec) -> GroupInstance:
    """Draw group sizes, class counts and initial edges; sizes are nudged so users split evenly over edges."""
    rng = np.random.default_rng(spec.seed)
    O, N, C = spec.num_groups, spec.num_edges, spec.classes
    sizes = rng.integers(spec.min_size, spec.max_size + 1, size=O)
    # grow (then shrink) the smallest groups until the user total divides by N
    while sizes.sum() % N:
        room = np.flatnonzero(sizes < spec.max_size)
        if room.size:
            sizes[room[np.argmin(sizes[room])]] += 1
        else:
            sizes[np.argmax(sizes)] -= 1
    if spec.iid:
        initial = rng.permutation(np.arange(O) % N)
        allowed = [np.arange(C)] * O
    else:
        initial = np.arange(O) % N
        k = spec.classes_per_group
        allowed = [np.arange(k * n, k * n + k) for n in initial]
    per_user = np.zeros((C, O), dtype=np.int64)
    for o in range(O):
        drawn = rng.choice(allowed[o], size=spec.per_user_samples)
        per_user[:, o] = np.bincount(drawn, minlength=C)
    rho = N if spec.rho is None else spec.rho
    return GroupInstance(
        population=PopulationMatrix.from_per_user(per_user, GroupSizes(sizes)),
        topology=ring_topology(initial, N, rho),
        initial_edges=initial.astype(np.int64),
    )
