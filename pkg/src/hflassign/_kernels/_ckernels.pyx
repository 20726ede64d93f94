# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled twins of the kernels in ``_pykernels``; same contracts, same tie-breaks."""
import numpy as np
cimport numpy as cnp
from libc.math cimport INFINITY, fabs, isfinite
from libc.stdlib cimport llabs

cnp.import_array()

ctypedef cnp.int64_t i64

cdef double _TIE = 1e-12


cdef i64 _numerator_flat(const i64* acc, i64* class_tot, i64* edge_tot,
                         Py_ssize_t C, Py_ssize_t N) noexcept nogil:
    cdef Py_ssize_t i, j
    cdef i64 total = 0, out = 0
    for i in range(C):
        class_tot[i] = 0
    for j in range(N):
        edge_tot[j] = 0
    for i in range(C):
        for j in range(N):
            class_tot[i] += acc[i * N + j]
            edge_tot[j] += acc[i * N + j]
    for i in range(C):
        total += class_tot[i]
    for i in range(C):
        for j in range(N):
            out += llabs(total * acc[i * N + j] - class_tot[i] * edge_tot[j])
    return out


def theta_numerator(edge_counts):
    cdef i64[:, ::1] c = np.array(edge_counts, dtype=np.int64, order="C", ndmin=2)
    cdef Py_ssize_t C = c.shape[0], N = c.shape[1]
    cdef i64[::1] class_tot = np.zeros(C, dtype=np.int64)
    cdef i64[::1] edge_tot = np.zeros(N, dtype=np.int64)
    if C == 0 or N == 0:
        return 0
    return int(_numerator_flat(&c[0, 0], &class_tot[0], &edge_tot[0], C, N))


def enumerate_best(options, offsets, Py_ssize_t num_classes, Py_ssize_t num_edges,
                   i64 equal_size):
    cdef const i64[:, ::1] opt = np.ascontiguousarray(options, dtype=np.int64)
    cdef const i64[::1] off = np.ascontiguousarray(offsets, dtype=np.int64)
    cdef Py_ssize_t G = off.shape[0] - 1
    cdef Py_ssize_t W = num_classes * num_edges
    cdef i64[::1] digit = np.zeros(G, dtype=np.int64)
    cdef i64[::1] best_choice = np.zeros(G, dtype=np.int64)
    cdef i64[::1] acc = np.zeros(W, dtype=np.int64)
    cdef i64[::1] class_tot = np.zeros(num_classes, dtype=np.int64)
    cdef i64[::1] edge_tot = np.zeros(num_edges, dtype=np.int64)
    cdef i64 best = -1, num, leaves = 0, feasible = 0
    cdef Py_ssize_t o, w, j, row
    cdef bint ok
    if G == 0:
        return -1, np.zeros(0, dtype=np.int64), 0, 0
    for o in range(G):
        if off[o + 1] <= off[o]:
            return -1, np.zeros(G, dtype=np.int64), 0, 0
        row = off[o]
        for w in range(W):
            acc[w] += opt[row, w]
    with nogil:
        while True:
            leaves += 1
            ok = True
            if equal_size >= 0:
                for j in range(num_edges):
                    edge_tot[j] = 0
                for w in range(W):
                    edge_tot[w % num_edges] += acc[w]
                for j in range(num_edges):
                    if edge_tot[j] != equal_size:
                        ok = False
                        break
            if ok:
                feasible += 1
                num = _numerator_flat(&acc[0], &class_tot[0], &edge_tot[0],
                                      num_classes, num_edges)
                if best < 0 or num < best:
                    best = num
                    for o in range(G):
                        best_choice[o] = digit[o]
            # odometer step, last group fastest
            o = G - 1
            while o >= 0:
                row = off[o] + digit[o]
                for w in range(W):
                    acc[w] -= opt[row, w]
                if off[o] + digit[o] + 1 < off[o + 1]:
                    digit[o] += 1
                    row = off[o] + digit[o]
                    for w in range(W):
                        acc[w] += opt[row, w]
                    break
                digit[o] = 0
                row = off[o]
                for w in range(W):
                    acc[w] += opt[row, w]
                o -= 1
            if o < 0:
                break
    return int(best), np.asarray(best_choice), int(leaves), int(feasible)


def simplex_iterate(double[:, ::1] T, double[::1] xb, i64[::1] basis, double[::1] d,
                    const double[::1] ub, cnp.uint8_t[::1] at_upper,
                    cnp.uint8_t[::1] is_basic, double tol, i64 max_iter, i64 bland_after):
    cdef Py_ssize_t m = T.shape[0], n = T.shape[1], i, j, q, p
    cdef i64 it = 0, degenerate = 0, status = 2
    cdef bint bland = False, elig, leaves_up
    cdef double best_abs, direction, t, t_min, step, a_i, ubb, piv, f, dq, entering_value
    cdef i64 leaving
    cdef double[::1] a = np.empty(m, dtype=np.float64)
    cdef double[::1] tr = np.empty(m, dtype=np.float64)
    cdef double[::1] prow = np.empty(n, dtype=np.float64)
    with nogil:
        while it < max_iter:
            q = -1
            best_abs = -1.0
            for j in range(n):
                if is_basic[j]:
                    continue
                if at_upper[j]:
                    elig = d[j] > tol
                else:
                    elig = d[j] < -tol and ub[j] > 0
                if not elig:
                    continue
                if bland:
                    q = j
                    break
                if fabs(d[j]) > best_abs:
                    best_abs = fabs(d[j])
                    q = j
            if q < 0:
                status = 0
                break
            direction = -1.0 if at_upper[q] else 1.0
            t_min = INFINITY
            for i in range(m):
                a_i = T[i, q] * direction
                a[i] = a_i
                t = INFINITY
                if a_i > tol:
                    t = xb[i] / a_i
                elif a_i < -tol:
                    ubb = ub[basis[i]]
                    if isfinite(ubb):
                        t = (ubb - xb[i]) / (-a_i)
                if t < 0.0:
                    t = 0.0
                tr[i] = t
                if t < t_min:
                    t_min = t
            p = -1
            if isfinite(t_min):
                for i in range(m):
                    if tr[i] <= t_min + _TIE:
                        if p < 0 or basis[i] < basis[p]:
                            p = i
            step = t_min
            if ub[q] <= t_min:
                step = ub[q]
                p = -1
            if not isfinite(step):
                status = 1
                break
            it += 1
            if step < _TIE:
                degenerate += 1
                if degenerate > bland_after:
                    bland = True
            else:
                degenerate = 0
            for i in range(m):
                xb[i] -= step * a[i]
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

            piv = T[p, q]
            for j in range(n):
                prow[j] = T[p, j] / piv
            for i in range(m):
                if i == p:
                    continue
                f = T[i, q]
                if f != 0.0:
                    for j in range(n):
                        T[i, j] -= f * prow[j]
            for j in range(n):
                T[p, j] = prow[j]
            for i in range(m):
                T[i, q] = 0.0
            T[p, q] = 1.0
            dq = d[q]
            for j in range(n):
                d[j] -= dq * prow[j]
            d[q] = 0.0
    return int(status), int(it)
