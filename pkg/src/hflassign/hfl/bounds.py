"""Divergence bound for periodic cloud averaging and the constants it needs."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from hflassign.hfl.model import LabeledDataset, Model, per_class_gradients

MIN_STEP = 1e-8
DEFAULT_SAFETY = 2.0


class InsufficientHistory(ValueError):
    pass


def compute_P_n(delta: float, edge_dist: np.ndarray, lipschitz: np.ndarray) -> float:
    """``1 + delta * <edge class distribution, per-class Lipschitz constants>``."""
    p = np.asarray(edge_dist, dtype=float)
    L = np.asarray(lipschitz, dtype=float)
    if p.shape != L.shape:
        raise ValueError("distribution and Lipschitz vectors differ in length")
    if np.any(L < 0) or delta < 0:
        raise ValueError("delta and Lipschitz constants must be non-negative")
    return float(1.0 + delta * float(p @ L))


def estimate_lipschitz(
    model: Model, snapshots: Sequence[np.ndarray], per_class: Sequence[LabeledDataset]
) -> np.ndarray:
    """Largest observed ratio ``|g_i(w) - g_i(w')| / |w - w'|`` per class over snapshot pairs.

    This only ever underestimates the true constant. Pairs closer than
    ``1e-8`` are skipped.
    """
    W = np.asarray(snapshots, dtype=float)
    if W.ndim != 2 or W.shape[0] < 2:
        raise ValueError("need at least two weight snapshots")
    grads = np.stack([per_class_gradients(model.with_weights(w), list(per_class)) for w in W])  # K x C x P
    iu, ju = np.triu_indices(W.shape[0], k=1)
    dw = np.linalg.norm(W[iu] - W[ju], axis=1)
    keep = dw >= MIN_STEP
    if not keep.any():
        raise ValueError("snapshots are identical; no pair to estimate from")
    iu, ju, dw = iu[keep], ju[keep], dw[keep]
    out = np.zeros(len(per_class))
    for i in range(len(per_class)):
        dg = np.linalg.norm(grads[iu, i] - grads[ju, i], axis=1)
        out[i] = float((dg / dw).max())
    return out


def jmax(model: Model, w: np.ndarray, per_class: Sequence[LabeledDataset]) -> float:
    g = per_class_gradients(model.with_weights(w), list(per_class))
    return float(np.linalg.norm(g, axis=1).max())


def lemma2_bound(
    jmax_history: Sequence[float],
    P: Sequence[float],
    r: Sequence[float],
    D_l1: Sequence[float],
    T: int,
    m: int,
    delta: float,
) -> float:
    """Bound on the cloud-model divergence after ``m`` cloud rounds of ``T`` steps.

    ``jmax_history[t]`` is the largest per-class gradient norm at the pooled
    model after ``t`` steps. Indices that fall before step 0 are read at
    step 0.
    """
    P = np.asarray(P, dtype=float)
    r = np.asarray(r, dtype=float)
    D = np.asarray(D_l1, dtype=float)
    if not (P.shape == r.shape == D.shape):
        raise ValueError("per-edge vectors differ in length")
    if T < 1 or m < 0:
        raise ValueError("T must be >= 1 and m >= 0")
    if T == 1 or not np.any(D):
        return 0.0
    J = np.asarray(jmax_history, dtype=float)
    need = m * T - 1
    if J.size < max(need, 1):
        raise InsufficientHistory(f"need {max(need, 1)} gradient-norm entries, got {J.size}")
    A = float(r @ P**T)
    total = 0.0
    for v in range(m + 1):
        inner = 0.0
        for n in range(P.size):
            if D[n] == 0 or r[n] == 0:
                continue
            s = 0.0
            for h in range(T - 1):
                t = max((m - v) * T - 2 - h, 0)
                s += P[n] ** (h + 1) * J[t]
            inner += r[n] * s * D[n]
        total += A**v * delta * inner
    return float(total)


@dataclass(frozen=True)
class BoundInputs:
    lipschitz: np.ndarray
    P_n: np.ndarray
    D_n_l1: np.ndarray
    r_n: np.ndarray
    jmax_history: np.ndarray

    def __post_init__(self):
        for name in ("lipschitz", "P_n", "D_n_l1", "r_n", "jmax_history"):
            v = np.asarray(getattr(self, name), dtype=float)
            if not np.all(np.isfinite(v)):
                raise ValueError(f"{name} has non-finite entries")
            object.__setattr__(self, name, v)
        if np.any(self.P_n < 1):
            raise ValueError("P_n entries must be at least 1")

    def bound(self, T: int, m: int, delta: float) -> float:
        return lemma2_bound(self.jmax_history, self.P_n, self.r_n, self.D_n_l1, T, m, delta)

    def series(self, T: int, rounds: int, delta: float) -> list[float]:
        return [self.bound(T, m, delta) for m in range(1, rounds + 1)]


def edge_statistics(edge_class_counts: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-edge class distributions (columns), data shares and L1 distances to the pooled mix."""
    cnt = np.asarray(edge_class_counts, dtype=float)  # C x N
    size = cnt.sum(axis=0)
    if np.any(size == 0):
        raise ValueError("every edge needs data")
    dist = cnt / size
    p = cnt.sum(axis=1) / cnt.sum()
    r = size / size.sum()
    D = np.abs(dist - p[:, None]).sum(axis=0)
    return dist, r, D


def bound_inputs(
    model: Model,
    trajectory: np.ndarray,
    snapshots: Sequence[np.ndarray],
    pooled: LabeledDataset,
    edge_class_counts: np.ndarray,
    delta: float,
    safety: float = DEFAULT_SAFETY,
) -> BoundInputs:
    """Assemble bound constants from a pooled trajectory and observed weights.

    The Lipschitz estimates come from ``snapshots`` and are scaled by
    ``safety`` before entering ``P_n``.
    """
    per_class = pooled.by_class()
    L = safety * estimate_lipschitz(model, snapshots, per_class)
    dist, r, D = edge_statistics(edge_class_counts)
    P = np.array([compute_P_n(delta, dist[:, n], L) for n in range(dist.shape[1])])
    J = np.array([jmax(model, w, per_class) for w in trajectory])
    return BoundInputs(L, P, D, r, J)
