"""Reference implementations of the hot kernels.

The compiled module ``_ckernels`` mirrors these function by function,
including tie-breaking, so both backends return identical results.
"""
import itertools

import numpy as np

OPTIMAL = 0
UNBOUNDED = 1
ITERATION_LIMIT = 2

_TIE = 1e-12


def theta_numerator(edge_counts):
    """Sum over edges and classes of ``|total * count - edge_size * class_total|``."""
    counts = np.asarray(edge_counts, dtype=np.int64)
    total = int(counts.sum())
    sizes = counts.sum(axis=0)
    class_totals = counts.sum(axis=1)
    dev = total * counts - class_totals[:, None] * sizes[None, :]
    return int(np.abs(dev).sum())


def enumerate_best(options, offsets, num_classes, num_edges, equal_size):
    """Scan every combination of per-group options for the lowest numerator.

    ``options`` stacks flattened C x N contribution blocks; group ``o`` owns
    rows ``offsets[o]:offsets[o + 1]``. Combinations are visited in
    lexicographic order with the last group varying fastest, and the first
    combination reaching the minimum wins. ``equal_size < 0`` disables the
    equal-edge-size filter.

    Returns ``(best_numerator, choice, leaves, feasible_leaves)``; the
    numerator is -1 when no combination passes the filter.
    """
    options = np.asarray(options, dtype=np.int64)
    offsets = np.asarray(offsets, dtype=np.int64)
    ngroups = offsets.size - 1
    ranges = [range(offsets[o], offsets[o + 1]) for o in range(ngroups)]
    best = -1
    best_choice = np.zeros(ngroups, dtype=np.int64)
    leaves = 0
    feasible = 0
    for combo in itertools.product(*ranges):
        leaves += 1
        acc = options[list(combo)].sum(axis=0).reshape(num_classes, num_edges)
        if equal_size >= 0 and np.any(acc.sum(axis=0) != equal_size):
            continue
        feasible += 1
        num = theta_numerator(acc)
        if best < 0 or num < best:
            best = num
            best_choice[:] = np.asarray(combo) - offsets[:-1]
    return best, best_choice, leaves, feasible


def simplex_iterate(T, xb, basis, d, ub, at_upper, is_basic, tol, max_iter, bland_after):
    """Bounded-variable primal simplex on a dense tableau, in place.

    Nonbasic variables sit at 0 or at their upper bound ``ub``; ``T`` is
    ``B^-1 A`` and ``d`` the reduced costs. Returns ``(status, iterations)``.
    """
    m, n = T.shape
    degenerate = 0
    bland = False
    it = 0
    while it < max_iter:
        nonbasic = is_basic == 0
        up = at_upper != 0
        elig = nonbasic & (((~up) & (d < -tol) & (ub > 0)) | (up & (d > tol)))
        cand = np.flatnonzero(elig)
        if cand.size == 0:
            return OPTIMAL, it
        if bland:
            q = int(cand[0])
        else:
            q = int(cand[np.argmax(np.abs(d[cand]))])
        direction = -1.0 if at_upper[q] else 1.0
        a = T[:, q] * direction

        t = np.full(m, np.inf)
        dec = a > tol
        t[dec] = xb[dec] / a[dec]
        ubb = ub[basis]
        inc = (a < -tol) & np.isfinite(ubb)
        t[inc] = (ubb[inc] - xb[inc]) / (-a[inc])
        np.maximum(t, 0.0, out=t)
        t_min = t.min() if m else np.inf
        p = -1
        if np.isfinite(t_min):
            rows = np.flatnonzero(t <= t_min + _TIE)
            p = int(rows[np.argmin(basis[rows])])
        step = t_min
        if ub[q] <= t_min:
            step = ub[q]
            p = -1
        if not np.isfinite(step):
            return UNBOUNDED, it
        it += 1

        if step < _TIE:
            degenerate += 1
            if degenerate > bland_after:
                bland = True
        else:
            degenerate = 0

        xb -= step * a
        if p < 0:
            at_upper[q] = 0 if at_upper[q] else 1
            continue

        leaving = basis[p]
        leaves_up = a[p] < 0
        entering_value = (ub[q] if at_upper[q] else 0.0) + direction * step
        is_basic[leaving] = 0
        at_upper[leaving] = 1 if leaves_up else 0
        is_basic[q] = 1
        at_upper[q] = 0
        basis[p] = q
        xb[p] = entering_value

        prow = T[p] / T[p, q]
        col = T[:, q].copy()
        col[p] = 0.0
        T -= np.outer(col, prow)
        T[p] = prow
        T[:, q] = 0.0
        T[p, q] = 1.0
        d -= d[q] * prow
        d[q] = 0.0
    return ITERATION_LIMIT, it
