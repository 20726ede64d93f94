"""Two-phase bounded-variable primal simplex over a dense tableau.

Pricing is Dantzig's rule; after ``3 * (rows + cols)`` consecutive
degenerate pivots the kernel switches to Bland's rule for the rest of the
phase. Artificial variables get an upper bound of zero after phase one, so
any that remain basic stay pinned at zero without an explicit drive-out.
"""
from __future__ import annotations

import numpy as np

from hflassign import _kernels
from hflassign.solver.lp import EQ, LE, LpModel, SolveResult, Status

FEAS_TOL = 1e-9
OPT_TOL = 1e-9


def _standardize(model: LpModel):
    """Map every variable onto ``0 <= x' <= u'`` and add row slacks.

    Returns the standard data plus the recipe to recover ``x``.
    """
    cols = []  # (orig index, sign, offset, upper)
    for j in range(model.num_vars):
        lo, hi = model.lb[j], model.ub[j]
        if np.isfinite(lo):
            cols.append((j, 1.0, lo, hi - lo))
        elif np.isfinite(hi):
            cols.append((j, -1.0, hi, np.inf))
        else:
            cols.append((j, 1.0, 0.0, np.inf))
            cols.append((j, -1.0, 0.0, np.inf))
    m = model.num_rows
    n_struct = len(cols)
    A = np.zeros((m, n_struct))
    c = np.zeros(n_struct)
    ub = np.zeros(n_struct)
    shift = np.zeros(model.num_vars)
    for k, (j, sign, off, hi) in enumerate(cols):
        A[:, k] = sign * model.A[:, j]
        c[k] = sign * model.c[j]
        ub[k] = hi
        shift[j] = off
    b = model.b - model.A @ shift
    slack_of = np.full(m, -1)
    slack_cols = []
    for i, s in enumerate(model.senses):
        if s == EQ:
            continue
        col = np.zeros(m)
        col[i] = 1.0 if s == LE else -1.0
        slack_of[i] = n_struct + len(slack_cols)
        slack_cols.append(col)
    if slack_cols:
        A = np.hstack([A, np.column_stack(slack_cols)])
        c = np.concatenate([c, np.zeros(len(slack_cols))])
        ub = np.concatenate([ub, np.full(len(slack_cols), np.inf)])
    return A, b, c, ub, slack_of, cols, shift, n_struct


def simplex_solve(model: LpModel, max_iter: int | None = None) -> SolveResult:
    A, b, c, ub, slack_of, cols, shift, n_struct = _standardize(model)
    m, n = A.shape
    if max_iter is None:
        max_iter = 50 * (m + n) + 1000
    bland_after = 3 * (m + n)

    # initial basis: a slack when its sign fits the rhs, else an artificial
    basis = np.empty(m, dtype=np.int64)
    art_cols = []
    coef = np.empty(m)
    for i in range(m):
        s = slack_of[i]
        if s >= 0 and A[i, s] * b[i] >= 0:
            basis[i] = s
            coef[i] = A[i, s]
        else:
            sign = 1.0 if b[i] >= 0 else -1.0
            basis[i] = n + len(art_cols)
            coef[i] = sign
            col = np.zeros(m)
            col[i] = sign
            art_cols.append(col)
    n_art = len(art_cols)
    if n_art:
        A = np.hstack([A, np.column_stack(art_cols)])
        ub = np.concatenate([ub, np.full(n_art, np.inf)])
        c = np.concatenate([c, np.zeros(n_art)])
    nt = n + n_art
    T = np.ascontiguousarray(A / coef[:, None])
    xb = b / coef
    at_upper = np.zeros(nt, dtype=np.uint8)
    is_basic = np.zeros(nt, dtype=np.uint8)
    is_basic[basis] = 1
    iterations = 0

    if n_art:
        c1 = np.zeros(nt)
        c1[n:] = 1.0
        d = c1 - c1[basis] @ T
        status, it = _kernels.simplex_iterate(
            T, xb, basis, d, ub, at_upper, is_basic, OPT_TOL, max_iter, bland_after
        )
        iterations += it
        if status != _kernels.OPTIMAL:
            return _fail(Status.INFEASIBLE, iterations, "phase one did not converge")
        infeas = float(xb[basis >= n].sum())
        scale = max(1.0, float(np.abs(b).max(initial=0.0)))
        if infeas > FEAS_TOL * scale * 10:
            return _fail(Status.INFEASIBLE, iterations, f"phase one residual {infeas:.3g}")
        ub = ub.copy()
        ub[n:] = 0.0
        at_upper[n:] = 0

    d = c - c[basis] @ T
    status, it = _kernels.simplex_iterate(
        T, xb, basis, d, ub, at_upper, is_basic, OPT_TOL, max_iter, bland_after
    )
    iterations += it
    if status == _kernels.UNBOUNDED:
        return _fail(Status.UNBOUNDED, iterations, "objective unbounded below")
    if status != _kernels.OPTIMAL:
        return _fail(Status.INFEASIBLE, iterations, "iteration limit reached")

    xs = np.where(at_upper[:nt] != 0, ub, 0.0)
    xs[basis] = xb
    x = shift.copy()
    for k, (j, sign, off, hi) in enumerate(cols):
        x[j] += sign * xs[k]
    objective = float(model.c @ x)
    info = {"iterations": iterations}
    y = None
    if model.y_shape is not None:
        y = x[model.y_slice].reshape(model.y_shape)
    return SolveResult(
        assignment=y,
        objective_value=objective,
        status=Status.OPTIMAL,
        fractional=True,
        x=x,
        info=info,
    )


def _fail(status: Status, iterations: int, reason: str) -> SolveResult:
    return SolveResult(
        assignment=None,
        objective_value=float("nan"),
        status=status,
        fractional=True,
        info={"iterations": iterations, "reason": reason},
    )
