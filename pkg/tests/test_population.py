from fractions import Fraction

import numpy as np
import pytest

from hflassign.population import (
    EmptyEdgeError,
    GroupAssignment,
    GroupSizes,
    PopulationError,
    PopulationMatrix,
    Topology,
    UserAssignment,
    aggregate_by_group,
    distance_l1,
    edge_distributions,
    edge_weights,
    expand_assignment,
    global_distribution,
    group_users,
    objective_theta,
    validate_assignment,
)


def recount_theta(per_user, alloc):
    """Exact distance from raw counts, written independently of the library."""
    C, O = len(per_user), len(per_user[0])
    N = len(alloc[0])
    edge = [[sum(per_user[c][o] * alloc[o][n] for o in range(O)) for n in range(N)] for c in range(C)]
    size = [sum(edge[c][n] for c in range(C)) for n in range(N)]
    total = sum(size)
    glob = [Fraction(sum(edge[c]), total) for c in range(C)]
    theta = Fraction(0)
    for n in range(N):
        if size[n] == 0:
            continue
        d = sum(abs(Fraction(edge[c][n], size[n]) - glob[c]) for c in range(C))
        theta += Fraction(size[n], total) * d
    return theta


def designed_noniid(num_edges=5, classes=10, per_class=10, users=4):
    """Every edge holds two classes; users at edge n carry only those."""
    per_user = np.zeros((classes, num_edges), dtype=int)
    for n in range(num_edges):
        per_user[(2 * n) % classes, n] = per_class
        per_user[(2 * n + 1) % classes, n] = per_class
    pop = PopulationMatrix.from_per_user(per_user, GroupSizes(np.full(num_edges, users)))
    topo = Topology(np.eye(num_edges, dtype=bool))
    y = GroupAssignment(np.eye(num_edges, dtype=int) * users)
    return pop, topo, y


class TestTypes:
    def test_rejects_single_class(self):
        with pytest.raises(PopulationError):
            PopulationMatrix(np.array([[1, 2]]))

    def test_rejects_empty_column(self):
        with pytest.raises(PopulationError, match="empty"):
            PopulationMatrix(np.array([[1, 0], [2, 0]]))

    def test_rejects_negative(self):
        with pytest.raises(PopulationError):
            PopulationMatrix(np.array([[1, -1], [2, 3]]))

    def test_group_totals_must_divide(self):
        with pytest.raises(PopulationError, match="divisible"):
            PopulationMatrix(np.array([[3], [2]]), "group", GroupSizes(np.array([2])))

    def test_per_user_of_group(self):
        pop = PopulationMatrix(np.array([[6, 2], [4, 2]]), "group", GroupSizes(np.array([2, 1])))
        np.testing.assert_array_equal(pop.per_user, [[3, 2], [2, 2]])

    def test_zero_size_group_rejected(self):
        with pytest.raises(PopulationError):
            GroupSizes(np.array([1, 0]))

    def test_unreachable_column_rejected(self):
        with pytest.raises(PopulationError, match="unreachable"):
            Topology(np.array([[True, False], [True, False]]))

    def test_encoding_round_trip(self):
        r = np.array([[0, -1], [-1, 0], [0, 0]])
        topo = Topology.from_encoding(r)
        np.testing.assert_array_equal(topo.to_encoding(), r)
        # a user's row of X times R is zero exactly when it sits in range
        x = np.array([[1, 0, 0], [0, 0, 1]])
        assert np.all(np.diag(x @ r) == 0)

    def test_assignment_rejects_negative(self):
        with pytest.raises(PopulationError):
            GroupAssignment(np.array([[1, -1]]))

    def test_immutable(self):
        pop = PopulationMatrix(np.array([[1], [2]]))
        with pytest.raises(ValueError):
            pop.counts[0, 0] = 5


class TestDistributions:
    def test_balanced_ten_classes(self):
        pop = PopulationMatrix(np.full((10, 3), 7))
        np.testing.assert_allclose(global_distribution(pop), np.full(10, 0.1), atol=1e-15)

    def test_single_class_mass(self):
        np.testing.assert_array_equal(global_distribution(PopulationMatrix(np.array([[5], [0]]))), [1.0, 0.0])

    def test_hand_sum(self):
        np.testing.assert_array_equal(global_distribution(PopulationMatrix(np.array([[1, 3], [2, 2]]))), [0.5, 0.5])

    def test_identity_edge(self):
        pop = PopulationMatrix.from_per_user(np.array([[1], [3]]), GroupSizes(np.array([4])))
        dist = edge_distributions(pop, GroupAssignment(np.array([[4]])))
        np.testing.assert_allclose(dist[:, 0], [0.25, 0.75])

    def test_symmetric_split(self):
        pop = PopulationMatrix.from_per_user(np.array([[2, 0], [0, 2]]), GroupSizes(np.array([2, 2])))
        dist = edge_distributions(pop, GroupAssignment(np.array([[1, 1], [1, 1]])))
        np.testing.assert_allclose(dist, np.full((2, 2), 0.5))

    def test_designed_edges_have_two_classes(self):
        pop, _, y = designed_noniid()
        dist = edge_distributions(pop, y)
        for n in range(5):
            expect = np.zeros(10)
            expect[[2 * n, 2 * n + 1]] = 0.5
            np.testing.assert_allclose(dist[:, n], expect)

    def test_empty_edge_named(self):
        pop = PopulationMatrix(np.array([[1], [1]]))
        with pytest.raises(EmptyEdgeError) as err:
            edge_distributions(pop, GroupAssignment(np.array([[1, 0, 0]])))
        assert err.value.edge == 1

    def test_weights_ratio(self):
        pop = PopulationMatrix.from_per_user(np.array([[10, 30], [0, 0]]), GroupSizes(np.array([1, 1])))
        np.testing.assert_allclose(edge_weights(pop, GroupAssignment(np.eye(2, dtype=int))), [0.25, 0.75])

    def test_weights_equal_edges(self):
        pop, _, y = designed_noniid()
        np.testing.assert_allclose(edge_weights(pop, y), np.full(5, 0.2))

    def test_weights_ignore_unassigned(self):
        pop = PopulationMatrix.from_per_user(np.array([[1, 5], [1, 5]]), GroupSizes(np.array([2, 3])))
        y = GroupAssignment(np.array([[1, 1], [0, 0]]))
        np.testing.assert_allclose(edge_weights(pop, y), [0.5, 0.5])

    def test_distance_cases(self):
        assert distance_l1([0.2, 0.8], [0.2, 0.8]) == 0.0
        edge = np.zeros(10)
        edge[:2] = 0.5
        assert distance_l1(edge, np.full(10, 0.1)) == pytest.approx(1.6, abs=1e-12)
        assert distance_l1([1, 0], [0, 1]) == 2.0
        with pytest.raises(PopulationError, match="length"):
            distance_l1([1, 0], [1, 0, 0])


class TestObjective:
    def test_designed_baseline_exact(self):
        pop, _, y = designed_noniid()
        obj = objective_theta(pop, y)
        assert obj.theta == 1.6
        assert Fraction(obj.numerator, obj.denominator) == Fraction(8, 5)

    def test_matches_global(self):
        pop = PopulationMatrix.from_per_user(np.array([[1], [1]]), GroupSizes(np.array([4])))
        assert objective_theta(pop, GroupAssignment(np.array([[2, 2]]))).theta == 0.0

    def test_random_matches_recount(self, rng, backend):
        for _ in range(50):
            O, N, C = rng.integers(1, 5), rng.integers(1, 4), rng.integers(2, 5)
            per_user = rng.integers(0, 5, size=(C, O))
            per_user[0] += 1
            alloc = rng.integers(0, 4, size=(O, N))
            alloc[:, 0] += 1
            pop = PopulationMatrix.from_per_user(per_user, GroupSizes(alloc.sum(axis=1)))
            obj = objective_theta(pop, GroupAssignment(alloc), allow_empty=True)
            expect = recount_theta(per_user.tolist(), alloc.tolist())
            assert Fraction(obj.numerator, obj.denominator) == expect
            assert obj.theta == pytest.approx(float(expect), rel=1e-12, abs=1e-15)
            if (pop.per_user @ alloc).sum(axis=0).all():
                assert obj.theta == pytest.approx(float(obj.edge_weights @ obj.per_edge_distance), rel=1e-12)

    def test_empty_edge_propagates(self):
        pop = PopulationMatrix(np.array([[1], [1]]))
        with pytest.raises(EmptyEdgeError):
            objective_theta(pop, GroupAssignment(np.array([[1, 0]])))


class TestValidation:
    def setup_method(self):
        self.sizes = GroupSizes(np.array([2, 3]))
        self.topo = Topology(np.array([[True, True], [False, True]]))

    def test_budget(self):
        rep = validate_assignment(GroupAssignment(np.array([[3, 0], [0, 3]])), self.sizes, self.topo)
        assert [v.constraint for v in rep.violations] == ["budget"]
        assert rep.violations[0].index == (0,)

    def test_reachability(self):
        rep = validate_assignment(GroupAssignment(np.array([[1, 1], [0, 3]])), self.sizes, self.topo)
        assert [(v.constraint, v.index) for v in rep.violations] == [("reachability", (0, 1))]

    def test_feasible(self):
        rep = validate_assignment(GroupAssignment(np.array([[2, 0], [1, 2]])), self.sizes, self.topo)
        assert rep.feasible and not rep.violations and rep.unassigned == {}

    def test_unassigned_flagged_not_violation(self):
        rep = validate_assignment(GroupAssignment(np.array([[1, 0], [1, 0]])), self.sizes, self.topo)
        assert rep.feasible
        assert rep.unassigned == {0: 1, 1: 2}

    def test_equal_size(self):
        pop = PopulationMatrix.from_per_user(np.array([[1, 1], [0, 1]]), self.sizes)
        y = GroupAssignment(np.array([[2, 0], [0, 3]]))
        rep = validate_assignment(y, self.sizes, self.topo, pop, equal_size=2)
        assert [v.index for v in rep.violations] == [(1,)]

    def test_shape(self):
        rep = validate_assignment(GroupAssignment(np.array([[1, 1]])), self.sizes, self.topo)
        assert rep.violations[0].constraint == "shape"


class TestGrouping:
    def test_identical_users(self):
        users = PopulationMatrix(np.tile([[2], [1]], 6))
        g = group_users(users, Topology.full(2, 6))
        assert len(g.sizes) == 1 and g.sizes.sizes[0] == 6
        np.testing.assert_array_equal(g.pop.counts, [[12], [6]])

    def test_distinct_users(self, rng):
        counts = np.arange(1, 9).reshape(2, 4)
        g = group_users(PopulationMatrix(counts), Topology.full(3, 4))
        assert len(g.sizes) == 4 and np.all(g.sizes.sizes == 1)

    def test_reach_splits_groups(self):
        users = PopulationMatrix(np.ones((2, 3), dtype=int))
        topo = Topology(np.array([[1, 1, 0], [0, 0, 1]], dtype=bool))
        g = group_users(users, topo)
        np.testing.assert_array_equal(g.mapping, [0, 0, 1])

    def test_ten_batches_per_edge(self):
        # 3 edges x 30 users in 10 batches of identical users -> 10 groups per edge
        cols, reach = [], []
        for n in range(3):
            for b in range(10):
                for _ in range(3):
                    cols.append([n + 1, b + 1])
                    r = np.zeros(3, dtype=bool)
                    r[n] = True
                    reach.append(r)
        g = group_users(PopulationMatrix(np.array(cols).T), Topology(np.array(reach).T))
        assert len(g.sizes) == 30

    def test_expand_lowest_index_first(self):
        x = expand_assignment(GroupAssignment(np.array([[2, 1]])), np.array([0, 0, 0]))
        np.testing.assert_array_equal(x.edges, [0, 0, 1])

    def test_expand_leaves_surplus_unassigned(self):
        x = expand_assignment(GroupAssignment(np.array([[1, 0], [0, 1]])), np.array([0, 1, 0, 1]))
        np.testing.assert_array_equal(x.edges, [0, 1, -1, -1])
        np.testing.assert_array_equal(x.unassigned, [2, 3])

    def test_expand_rejects_overfull(self):
        with pytest.raises(PopulationError):
            expand_assignment(GroupAssignment(np.array([[3, 0]])), np.array([0, 0]))

    def test_round_trip_counts(self, rng):
        counts = rng.integers(0, 3, size=(3, 12))
        counts[0] += 1
        counts[:, 6:] = counts[:, :6]
        users = PopulationMatrix(counts)
        base = rng.random((2, 6)) < 0.5
        base[np.arange(6) % 2, np.arange(6)] = True
        topo = Topology(np.tile(base, 2))
        g = group_users(users, topo)
        from hflassign.heuristic import equal_assign

        y = equal_assign(g.pop, g.topo)
        x = expand_assignment(y, g.mapping)
        np.testing.assert_array_equal(aggregate_by_group(x, g.mapping, len(g.sizes)).alloc, y.alloc)
        user_level = counts @ x.x
        np.testing.assert_array_equal(user_level, g.pop.per_user @ y.alloc)
        assert validate_assignment(x.as_group_assignment(), GroupSizes.ones(12), topo).feasible

    def test_from_edges(self):
        x = UserAssignment.from_edges([1, -1, 0], 2)
        np.testing.assert_array_equal(x.x, [[0, 1], [0, 0], [1, 0]])
