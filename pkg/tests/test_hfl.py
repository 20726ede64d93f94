import math

import numpy as np
import pytest

from hflassign.hfl import (
    BoundInputs,
    InsufficientHistory,
    LabeledDataset,
    Model,
    ModelKind,
    SimConfig,
    TrainLog,
    aggregate,
    compute_P_n,
    edge_vs_virtual_deviation,
    estimate_lipschitz,
    evaluate,
    gradient,
    init_model,
    lemma2_bound,
    load_weights,
    loss,
    num_weights,
    run_centralized_twin,
    run_hfl,
    save_weights,
    verify_lemma1,
)
from hflassign.population import EmptyEdgeError


def blobs(rng, n, d, C, shift=2.0):
    y = np.arange(n) % C
    x = rng.standard_normal((n, d)) + shift * np.eye(C, d)[y]
    return LabeledDataset(x, y, C)


def scalar_loss(model, data):
    """Loop-by-loop cross-entropy, independent of the vectorised code."""
    d, C = model.dims[0], model.dims[-1]
    w = model.weights
    total = 0.0
    for x, y in zip(data.features, data.labels):
        if model.kind == ModelKind.SOFTMAX_REGRESSION:
            z = [sum(x[j] * w[j * C + c] for j in range(d)) + w[d * C + c] for c in range(C)]
        else:
            h = model.dims[1]
            hid = []
            for k in range(h):
                v = sum(x[j] * w[j * h + k] for j in range(d)) + w[d * h + k]
                hid.append(max(v, 0.0))
            off = d * h + h
            z = [sum(hid[k] * w[off + k * C + c] for k in range(h)) + w[off + h * C + c] for c in range(C)]
        m = max(z)
        logp = z[y] - m - math.log(sum(math.exp(v - m) for v in z))
        total -= max(logp, math.log(1e-12))
    return total / len(data)


def fd_gradient(model, data, h=1e-6):
    g = np.zeros_like(model.weights)
    for i in range(g.size):
        wp, wm = model.weights.copy(), model.weights.copy()
        wp[i] += h
        wm[i] -= h
        g[i] = (loss(model.with_weights(wp), data) - loss(model.with_weights(wm), data)) / (2 * h)
    return g


def random_model(rng, kind, d, C, hidden=4):
    dims = (d, C) if kind == ModelKind.SOFTMAX_REGRESSION else (d, hidden, C)
    return Model(kind, dims, rng.normal(scale=0.5, size=num_weights(kind, dims)))


KINDS = [ModelKind.SOFTMAX_REGRESSION, ModelKind.DENSE_NET]


class TestModel:
    def test_weight_length_checked(self):
        with pytest.raises(ValueError):
            Model(ModelKind.SOFTMAX_REGRESSION, (3, 2), np.zeros(5))

    def test_dataset_label_range(self):
        with pytest.raises(ValueError):
            LabeledDataset(np.zeros((2, 1)), np.array([0, 3]), 3)

    @pytest.mark.parametrize("kind", KINDS)
    def test_outputs_are_distributions(self, rng, kind):
        from hflassign.hfl import predict_proba

        model = random_model(rng, kind, 4, 3)
        p = predict_proba(model, rng.standard_normal((20, 4)))
        assert np.all(p >= 0)
        np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-12)

    def test_uniform_predictor(self, rng):
        model = Model(ModelKind.SOFTMAX_REGRESSION, (3, 5), np.zeros(20))
        assert loss(model, blobs(rng, 10, 3, 5)) == pytest.approx(math.log(5), rel=1e-12)

    def test_confident_predictor_clamped(self):
        x = np.eye(3)
        w = np.concatenate([(1e4 * np.eye(3)).ravel(), np.zeros(3)])
        right = LabeledDataset(x, np.arange(3), 3)
        wrong = LabeledDataset(x, np.array([1, 2, 0]), 3)
        model = Model(ModelKind.SOFTMAX_REGRESSION, (3, 3), w)
        assert 0.0 <= loss(model, right) <= 1e-12
        assert loss(model, wrong) == pytest.approx(-math.log(1e-12), rel=1e-12)

    @pytest.mark.parametrize("kind", KINDS)
    def test_loss_matches_scalar(self, rng, kind):
        for _ in range(5):
            model = random_model(rng, kind, 3, 4)
            data = blobs(rng, 7, 3, 4)
            assert loss(model, data) == pytest.approx(scalar_loss(model, data), rel=1e-12)

    @pytest.mark.parametrize("kind", KINDS)
    def test_finite_differences(self, rng, kind):
        for _ in range(5):
            model = random_model(rng, kind, 5, 3)
            data = blobs(rng, 12, 5, 3)
            assert np.abs(gradient(model, data) - fd_gradient(model, data)).max() <= 1e-5

    def test_balanced_bias_gradient_zero(self, rng):
        x = rng.standard_normal((4, 3))
        data = LabeledDataset(np.vstack([x, -x]), np.array([0] * 4 + [1] * 4), 2)
        g = gradient(Model(ModelKind.SOFTMAX_REGRESSION, (3, 2), np.zeros(8)), data)
        np.testing.assert_allclose(g[-2:], 0.0, atol=1e-15)

    def test_singleton_gradient_formula(self, rng):
        model = random_model(rng, ModelKind.SOFTMAX_REGRESSION, 3, 4)
        x = rng.standard_normal(3)
        data = LabeledDataset(x[None], np.array([2]), 4)
        W, b = model.weights[:12].reshape(3, 4), model.weights[12:]
        z = x @ W + b
        p = np.exp(z - z.max())
        p /= p.sum()
        p[2] -= 1.0
        np.testing.assert_allclose(gradient(model, data), np.concatenate([np.outer(x, p).ravel(), p]), atol=1e-14)

    def test_empty_data_rejected(self):
        model = Model(ModelKind.SOFTMAX_REGRESSION, (2, 2), np.zeros(6))
        empty = LabeledDataset(np.zeros((0, 2)), np.zeros(0, dtype=int), 2)
        for fn in (loss, gradient, evaluate):
            with pytest.raises(ValueError):
                fn(model, empty)

    def test_evaluate_cases(self, rng):
        x = np.eye(3)
        w = np.concatenate([(5 * np.eye(3)).ravel(), np.zeros(3)])
        separable = LabeledDataset(x, np.arange(3), 3)
        assert evaluate(Model(ModelKind.SOFTMAX_REGRESSION, (3, 3), w), separable) == 1.0
        balanced = LabeledDataset(rng.standard_normal((12, 3)), np.arange(12) % 4, 4)
        assert evaluate(Model(ModelKind.SOFTMAX_REGRESSION, (3, 4), np.zeros(16)), balanced) == 0.25
        model = random_model(rng, ModelKind.SOFTMAX_REGRESSION, 3, 4)
        data = LabeledDataset(rng.standard_normal((10, 3)), rng.integers(0, 4, size=10), 4)
        W, b = model.weights[:12].reshape(3, 4), model.weights[12:]
        hits = sum(int(np.argmax(xi @ W + b) == yi) for xi, yi in zip(data.features, data.labels))
        assert evaluate(model, data) == hits / 10

    def test_init_shared_and_bounded(self):
        a = init_model(ModelKind.DENSE_NET, (4, 8, 3), seed=3)
        b = init_model(ModelKind.DENSE_NET, (4, 8, 3), seed=3)
        np.testing.assert_array_equal(a.weights, b.weights)
        assert np.abs(a.weights).max() <= 0.05

    def test_weight_dump_round_trip(self, tmp_path):
        model = init_model(ModelKind.DENSE_NET, (4, 8, 3), seed=1)
        save_weights(tmp_path / "w.bin", model)
        assert (tmp_path / "w.bin").stat().st_size == 8 * model.weights.size
        back = load_weights(tmp_path / "w.bin")
        np.testing.assert_array_equal(back.weights, model.weights)
        assert back.dims == model.dims and back.kind == model.kind


class TestAggregate:
    def test_cases(self):
        w1, w2 = np.array([1.0, 2.0]), np.array([5.0, -2.0])
        np.testing.assert_array_equal(aggregate([w1, w1], [3, 7]), w1)
        np.testing.assert_allclose(aggregate([w1, w2], [1, 3]), 0.25 * w1 + 0.75 * w2)

    def test_errors(self):
        with pytest.raises(ValueError):
            aggregate([np.zeros(2)], [1, 2])
        with pytest.raises(ValueError):
            aggregate([], [])
        with pytest.raises(ValueError):
            aggregate([np.zeros(2)], [0])


def skewed_users(rng, d=4, C=3, n=8):
    return [blobs(rng, n, d, C) .subset(np.arange(n)[np.arange(n) % C == c]) for c in range(C)]


class TestSimulation:
    def setup_method(self):
        rng = np.random.default_rng(0)
        self.users = skewed_users(rng) + skewed_users(rng)
        self.model = init_model(ModelKind.SOFTMAX_REGRESSION, (4, 3), seed=0)

    def test_fedsgd_every_step_matches_twin(self):
        cfg = SimConfig(T=1, T_prime=1, delta=0.1, rounds=30)
        run = run_hfl(self.users, [0, 0, 1, 1, 1, 0], cfg, self.model)
        assert len(run.log) == 30
        assert run.log.column("divergence").max() <= 1e-9

    def test_single_user_is_plain_descent(self):
        cfg = SimConfig(T=3, T_prime=2, delta=0.1, rounds=4)
        run = run_hfl(self.users[:1], [0], cfg, self.model)
        w = self.model.weights.copy()
        for _ in range(cfg.total_steps):
            w = w - 0.1 * gradient(self.model.with_weights(w), self.users[0])
        np.testing.assert_allclose(run.final_model.weights, w, atol=1e-15)

    def test_empty_edge_rejected(self):
        with pytest.raises(EmptyEdgeError):
            run_hfl(self.users, [0, 0, 0, 2, 2, 2], SimConfig(rounds=1), self.model)

    def test_unassigned_rejected(self):
        with pytest.raises(ValueError):
            run_hfl(self.users, [0, -1, 0, 1, 1, 1], SimConfig(rounds=1), self.model)

    def test_deterministic_minibatch(self):
        cfg = SimConfig(T=2, delta=0.1, rounds=3, batch_size=2, seed=5)
        a = run_hfl(self.users, [0, 0, 1, 1, 1, 0], cfg, self.model)
        b = run_hfl(self.users, [0, 0, 1, 1, 1, 0], cfg, self.model)
        assert a.log.to_csv() == b.log.to_csv()
        assert [r.weights_hash for r in a.log.rows] == [r.weights_hash for r in b.log.rows]

    def test_single_local_step_matches_per_user_loop(self):
        from hflassign.hfl.simulate import USER_STREAM, _batch, _edge_round, _sgd_step

        model = init_model(ModelKind.DENSE_NET, (4, 5, 3), seed=3)
        cfg = SimConfig(T=1, T_prime=1, delta=0.2, rounds=1, batch_size=3, seed=4)
        members = np.array([0, 2, 3])
        local = [
            _sgd_step(model, model.weights, _batch(self.users[u], 3, [4, USER_STREAM, int(u), 7]), 0.2)
            for u in members
        ]
        expect = aggregate(local, [len(self.users[u]) for u in members])
        got = _edge_round(model, model.weights, self.users, members, cfg, 7)
        np.testing.assert_allclose(got, expect, rtol=0, atol=1e-14)

    def test_twin_batch_scales_with_edges(self):
        from hflassign.hfl.simulate import CENTRAL_STREAM

        pooled = LabeledDataset.concat(self.users)
        cfg = SimConfig(T=1, delta=0.1, rounds=1, batch_size=3, seed=2)
        twin = run_centralized_twin(pooled, self.model, cfg, num_edges=2)
        rng = np.random.default_rng([2, CENTRAL_STREAM, 0])
        idx = np.sort(rng.permutation(len(pooled))[:6])
        expect = self.model.weights - 0.1 * gradient(self.model, pooled.subset(idx))
        np.testing.assert_allclose(twin.trajectory[1], expect, atol=1e-15)

    def test_twin_zero_steps(self):
        pooled = LabeledDataset.concat(self.users)
        twin = run_centralized_twin(pooled, self.model, SimConfig(rounds=0))
        np.testing.assert_array_equal(twin.trajectory, self.model.weights[None])

    def test_twin_loss_monotone(self):
        pooled = LabeledDataset.concat(self.users)
        cfg = SimConfig(T=1, delta=0.01, rounds=100)
        twin = run_centralized_twin(pooled, self.model, cfg)
        losses = twin.log.column("loss")
        assert np.all(np.diff(losses) <= 1e-15)

    def test_log_csv(self, tmp_path):
        cfg = SimConfig(T=2, delta=0.1, rounds=3, eval_every=2)
        log = run_hfl(self.users, [0, 0, 1, 1, 1, 0], cfg, self.model, theta=0.5).log
        text = log.to_csv()
        assert text.splitlines()[0] == "round,loss,accuracy,divergence,theta,bound"
        assert text.splitlines()[1].split(",")[1] == ""  # round 1 is not evaluated
        log.with_bounds([1.0, 2.0, 3.0]).write_csv(tmp_path / "log.csv")
        back = TrainLog.read_csv(tmp_path / "log.csv")
        np.testing.assert_array_equal(back.column("round"), [1, 2, 3])
        np.testing.assert_array_equal(back.column("bound"), [1.0, 2.0, 3.0])
        assert np.all(back.column("divergence") >= 0)


class TestLemma1:
    def setup_method(self):
        rng = np.random.default_rng(1)
        self.users = skewed_users(rng, n=12)
        self.model = init_model(ModelKind.SOFTMAX_REGRESSION, (4, 3), seed=1)

    def test_skewed_users_match(self):
        cfg = SimConfig(T=1, T_prime=1, delta=0.05)
        assert verify_lemma1(self.users, self.model, cfg, steps=50) <= 1e-9

    def test_single_user_exact(self):
        assert verify_lemma1(self.users[:1], self.model, SimConfig(delta=0.05), steps=50) == 0.0

    def test_two_local_steps_diverge(self):
        assert edge_vs_virtual_deviation(self.users, self.model, 0.05, 50, T_prime=2) > 1e-6

    def test_preconditions(self):
        with pytest.raises(ValueError):
            verify_lemma1(self.users, self.model, SimConfig(T_prime=2), steps=5)
        with pytest.raises(ValueError):
            verify_lemma1(self.users, self.model, SimConfig(batch_size=2), steps=5)


def softmax_lipschitz_upper(data):
    """Half the top eigenvalue of the second moment of the bias-augmented inputs."""
    xt = np.hstack([data.features, np.ones((len(data), 1))])
    return 0.5 * float(np.linalg.eigvalsh(xt.T @ xt / len(data)).max())


class TestBoundPieces:
    def test_P_n(self, rng):
        assert compute_P_n(0.0, [0.5, 0.5], [3.0, 4.0]) == 1.0
        assert compute_P_n(0.1, np.full(4, 0.25), np.full(4, 2.0)) == pytest.approx(1.2)
        p, L = rng.dirichlet(np.ones(5)), rng.random(5) * 3
        assert compute_P_n(0.3, p, L) == pytest.approx(1 + 0.3 * sum(a * b for a, b in zip(p, L)), rel=1e-14)
        with pytest.raises(ValueError):
            compute_P_n(0.1, [1.0], [1.0, 2.0])

    def test_lipschitz_against_analytic(self, rng):
        data = blobs(rng, 60, 3, 3)
        model = init_model(ModelKind.SOFTMAX_REGRESSION, (3, 3), seed=0)
        per_class = data.by_class()
        snaps = [model.weights + rng.normal(scale=0.3, size=model.weights.size) for _ in range(12)]
        est = estimate_lipschitz(model, snaps, per_class)
        upper = np.array([softmax_lipschitz_upper(part) for part in per_class])
        assert np.all(est <= upper * (1 + 1e-9))
        assert np.all(est >= 0.1 * upper)
        # a different draw of snapshots lands close to the same value
        again = estimate_lipschitz(model, [s[::-1].copy() for s in snaps], per_class)
        np.testing.assert_allclose(again, est, rtol=0.5)

    def test_lipschitz_guards(self, rng):
        data = blobs(rng, 10, 3, 2)
        model = init_model(ModelKind.SOFTMAX_REGRESSION, (3, 2), seed=0)
        with pytest.raises(ValueError):
            estimate_lipschitz(model, [model.weights, model.weights.copy()], data.by_class())
        with pytest.raises(ValueError):
            estimate_lipschitz(model, [model.weights], data.by_class())
        near = [model.weights, model.weights, model.weights + 1e-6]
        est = estimate_lipschitz(model, near, data.by_class()[:1])
        assert np.all(np.isfinite(est))

    def test_bound_zero_cases(self):
        J = np.ones(50)
        assert lemma2_bound(J, [1.1, 1.2], [0.5, 0.5], [0.0, 0.0], T=5, m=3, delta=0.1) == 0.0
        assert lemma2_bound([], [1.1, 1.2], [0.5, 0.5], [1.0, 1.0], T=1, m=3, delta=0.1) == 0.0

    def test_bound_hand_instance(self):
        # m = 1, T = 2, one edge: v = 0 reads step 0; v = 1 reads step -2, clamped to 0
        P, r, D, J0, delta = 1.3, 1.0, 0.8, 2.5, 0.1
        A = r * P**2
        expect = delta * r * P * J0 * D * (1 + A)
        assert lemma2_bound([J0], [P], [r], [D], T=2, m=1, delta=delta) == pytest.approx(expect, rel=1e-14)

    def test_bound_direct_double_sum(self, rng):
        N, T, m, delta = 3, 4, 5, 0.05
        P = 1 + rng.random(N) * 0.2
        r = rng.dirichlet(np.ones(N))
        D = rng.random(N)
        J = rng.random(m * T)
        expect = 0.0
        A = sum(r[n] * P[n] ** T for n in range(N))
        for v in range(m + 1):
            s = 0.0
            for n in range(N):
                for h in range(T - 1):
                    s += r[n] * P[n] ** (h + 1) * J[max((m - v) * T - 2 - h, 0)] * D[n]
            expect += A**v * delta * s
        assert lemma2_bound(J, P, r, D, T, m, delta) == pytest.approx(expect, rel=1e-12)

    def test_insufficient_history(self):
        with pytest.raises(InsufficientHistory):
            lemma2_bound(np.ones(5), [1.1], [1.0], [1.0], T=5, m=2, delta=0.1)

    def test_safety_factor_scales(self):
        base = dict(D_n_l1=[0.5, 1.0], r_n=[0.5, 0.5], jmax_history=np.ones(40))
        lo = BoundInputs(np.ones(2), np.array([1.01, 1.01]), **base).bound(5, 4, 0.01)
        hi = BoundInputs(2 * np.ones(2), np.array([1.02, 1.02]), **base).bound(5, 4, 0.01)
        assert hi > lo > 0

    def test_inputs_validated(self):
        with pytest.raises(ValueError):
            BoundInputs(np.ones(2), np.array([0.5, 1.0]), np.ones(2), np.ones(2) / 2, np.ones(3))
