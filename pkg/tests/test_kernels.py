import numpy as np
import pytest

from conftest import random_group_instance
from hflassign import _kernels
from hflassign.solver import build_epigraph_lp, equal_edge_size, simplex_solve

BACKENDS = _kernels.backends()
needs_compiled = pytest.mark.skipif("cython" not in BACKENDS, reason="compiled kernels not built")


def test_python_fallback_always_present():
    assert "python" in BACKENDS
    assert _kernels.BACKEND in BACKENDS


def test_numerator_by_hand():
    # edges [2,0] and [0,2]: T = 4, each cell |4*2 - 2*2| = 4, four cells
    counts = np.array([[2, 0], [0, 2]], dtype=np.int64)
    for mod in BACKENDS.values():
        assert mod.theta_numerator(counts) == 16


@needs_compiled
def test_numerator_parity(rng):
    for _ in range(200):
        counts = rng.integers(0, 50, size=(rng.integers(2, 8), rng.integers(1, 8))).astype(np.int64)
        counts[0, 0] += 1
        assert BACKENDS["cython"].theta_numerator(counts) == BACKENDS["python"].theta_numerator(counts)


@needs_compiled
def test_enumeration_parity(rng):
    for _ in range(30):
        C, N = int(rng.integers(2, 4)), int(rng.integers(1, 4))
        offsets = [0]
        rows = []
        for _ in range(int(rng.integers(1, 4))):
            k = int(rng.integers(1, 5))
            rows.extend(rng.integers(0, 4, size=(k, C * N)))
            offsets.append(offsets[-1] + k)
        rows = np.asarray(rows, dtype=np.int64)
        offsets = np.asarray(offsets, dtype=np.int64)
        for eq in (-1, int(rng.integers(1, 6))):
            a = BACKENDS["cython"].enumerate_best(rows, offsets, C, N, eq)
            b = BACKENDS["python"].enumerate_best(rows, offsets, C, N, eq)
            assert a[0] == b[0] and a[2:] == b[2:]
            np.testing.assert_array_equal(a[1], b[1])


@needs_compiled
def test_simplex_parity(monkeypatch):
    rng = np.random.default_rng(21)
    for _ in range(20):
        pop, topo = random_group_instance(rng)
        model = build_epigraph_lp(pop, topo, equal_edge_size(pop, topo.num_edges))
        out = {}
        for name, mod in BACKENDS.items():
            monkeypatch.setattr(_kernels, "simplex_iterate", mod.simplex_iterate)
            out[name] = simplex_solve(model)
        assert out["cython"].info["iterations"] == out["python"].info["iterations"]
        np.testing.assert_allclose(out["cython"].x, out["python"].x, atol=1e-9)
