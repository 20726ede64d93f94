import sys

import numpy as np
import pytest

from hflassign import _kernels
from hflassign.population import GroupSizes, PopulationMatrix, Topology
from hflassign.solver import equal_edge_size


def random_group_instance(rng, max_groups=4, max_size=4, max_edges=3, max_classes=3, need_equal=True):
    """Small group-level instance; with ``need_equal`` the equal-size constraint can be met."""
    while True:
        O = int(rng.integers(1, max_groups + 1))
        N = int(rng.integers(1, max_edges + 1))
        C = int(rng.integers(2, max_classes + 1))
        per_user = rng.integers(0, 4, size=(C, O))
        per_user[rng.integers(0, C, size=O), np.arange(O)] += 1
        sizes = rng.integers(1, max_size + 1, size=O)
        reach = rng.random((N, O)) < 0.7
        reach[rng.integers(0, N, size=O), np.arange(O)] = True
        pop = PopulationMatrix.from_per_user(per_user, GroupSizes(sizes))
        topo = Topology(reach)
        if not need_equal:
            return pop, topo
        S = equal_edge_size(pop, N)
        if S is None:
            continue
        from hflassign.solver import brute_force_optimal

        if brute_force_optimal(pop, topo, equal_size=S).assignment is not None:
            return pop, topo


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(params=sorted(_kernels.backends()))
def backend(request, monkeypatch):
    """Run a test once per available kernel backend."""
    mod = _kernels.backends()[request.param]
    for name in ("theta_numerator", "enumerate_best", "simplex_iterate"):
        monkeypatch.setattr(_kernels, name, getattr(mod, name))
    import hflassign.population as population

    monkeypatch.setattr(population, "theta_numerator", mod.theta_numerator)
    return request.param


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "REPORT", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
