import numpy as np
import pytest

from circuitpinn import autodiff as ad
from circuitpinn import pinn
from circuitpinn.cli import CASES, case_text
from circuitpinn.errors import ConfigError, NonFiniteError
from circuitpinn.netlist import parse
from circuitpinn.refsolver import dc_operating_point
from circuitpinn.system import build_system

RC = "v1 in 0 dc 1\nr1 in out 1k\nc1 out 0 1u ic=0\n.tran 5m\n"


def rc_system():
    return build_system(parse(RC))


def attached(sys, layers, seed=1, mode="soft", jitter=0.0):
    p = pinn.init_network(layers, seed)
    p = pinn.attach_system(p, sys, dc_operating_point(sys), mode)
    if jitter:
        rng = np.random.default_rng(seed)
        for a in p.arrays():
            a += rng.normal(0.0, jitter, a.shape)
    return p


class TestInit:
    def test_deterministic(self):
        a, b = pinn.init_network([1, 8, 8, 3], 7), pinn.init_network([1, 8, 8, 3], 7)
        for x, y in zip(a.arrays(), b.arrays()):
            np.testing.assert_array_equal(x, y)

    def test_seed_matters(self):
        a, b = pinn.init_network([1, 8, 3], 0), pinn.init_network([1, 8, 3], 1)
        assert not np.array_equal(a.weights[0], b.weights[0])

    @pytest.mark.parametrize("layers", [[1, 0, 3], [1], [1, 4, -2]])
    def test_bad_layers(self, layers):
        with pytest.raises(ConfigError):
            pinn.init_network(layers, 0)

    def test_zero_biases_and_xavier_bound(self):
        p = pinn.init_network([1, 64, 64, 5], 3)
        assert all(np.all(b == 0) for b in p.biases)
        for w in p.weights:
            assert np.max(np.abs(w)) <= np.sqrt(6.0 / sum(w.shape))
        assert p.layers == [1, 64, 64, 5]

    def test_table_i(self):
        assert pinn.TABLE_I["amplifier"] == {"epochs": 25000, "lr": 5e-3}
        assert pinn.TABLE_I["ringosc5"] == {"epochs": 20000, "lr": 5e-3}
        assert pinn.TABLE_I["feram"] == {"epochs": 60000, "lr": 2e-4}

    @pytest.mark.parametrize(
        "kw",
        [{"epochs": 0}, {"lr": 0.0}, {"n_collocation": 1}, {"ic_weight": -1.0}, {"hidden": (4, 0)},
         {"resample": "sobol"}, {"ic_mode": "medium"}, {"causal": -1.0}, {"adam": (1.0, 0.999, 1e-8)}],
    )
    def test_bad_config(self, kw):
        with pytest.raises(ConfigError):
            pinn.TrainConfig(**kw).validate()


class TestForward:
    def test_linear_network_derivative(self):
        s = rc_system()
        p = pinn.attach_system(pinn.init_network([1, s.n], 0), s, np.zeros(s.n), "soft")
        w = p.weights[0][0]
        for t in (0.0, 1.7e-3, 5e-3):
            _, du, _ = pinn.forward_with_time_derivative(p, s, t)
            # the network input is 2 tau - 1, so N(tau) has slope 2 w
            np.testing.assert_allclose([d.value for d in du], pinn.INPUT_SLOPE * w * s.scales / s.t_stop, rtol=1e-15)

    def test_hard_mode_starts_at_initial_state(self):
        s = rc_system()
        p = attached(s, [1, 6, 6, s.n], mode="hard", jitter=0.5)
        u, _, _ = pinn.forward_with_time_derivative(p, s, 0.0)
        np.testing.assert_array_equal([x.value for x in u], p.u_init)
        u_b, _ = pinn._map_outputs(p, np.zeros(1), *pinn._forward(p, np.zeros(1))[:2])
        np.testing.assert_array_equal(u_b[0], p.u_init)

    @pytest.mark.parametrize("mode", ["soft", "hard"])
    def test_time_derivative_matches_finite_difference(self, mode):
        s = rc_system()
        p = attached(s, [1, 5, 5, s.n], mode=mode, jitter=0.3)
        h = 1e-9 * s.t_stop
        for t in (1e-3, 2.5e-3, 4e-3):
            _, du, _ = pinn.forward_with_time_derivative(p, s, t)
            hi = pinn.infer(p, s, [t + h])
            lo = pinn.infer(p, s, [t - h])
            for i, name in enumerate(s.names):
                fd = (hi[name][0] - lo[name][0]) / (2 * h)
                assert du[i].value == pytest.approx(fd, rel=1e-6, abs=1e-9 * s.scales[i] / s.t_stop)


class TestLoss:
    @pytest.mark.parametrize("mode,causal", [("soft", 0.0), ("hard", 0.0), ("soft", 30.0)])
    def test_batched_route_matches_tape_route(self, mode, causal):
        s = rc_system()
        cfg = pinn.TrainConfig(hidden=(3, 4), ic_mode=mode, causal=causal)
        p = attached(s, [1, 3, 4, s.n], mode=mode, jitter=0.3)
        times = np.linspace(0, s.t_stop, 6)
        value, grads, _ = pinn.loss_and_grad(p, s, times, cfg)
        tape = ad.Tape()
        root, leaves = pinn.loss(p, s, times, cfg, tape)
        adj = tape.backward(root)
        tape_grads = np.array([adj[v] for v in leaves[2]])
        flat = np.concatenate([g.ravel() for g in grads])
        assert value == pytest.approx(root.value, rel=1e-13)
        np.testing.assert_allclose(flat, tape_grads, rtol=1e-10, atol=1e-12 * np.max(np.abs(flat)))

    @pytest.mark.parametrize("name", CASES)
    def test_gradient_matches_finite_difference(self, name):
        s = build_system(parse(case_text(name)))
        cfg = pinn.TrainConfig(hidden=(4, 4))
        p = pinn.attach_system(pinn.init_network([1, 4, 4, s.n], 2), s, dc_operating_point(s), "soft",
                               pinn.output_scales(s, dc_operating_point(s)))
        rng = np.random.default_rng(0)
        for a in p.arrays():
            a += rng.normal(0.0, 0.2, a.shape)
        times = np.linspace(0, s.t_stop, 8)
        _, grads, _ = pinn.loss_and_grad(p, s, times, cfg)
        arrays = p.arrays()
        picks = [(k, tuple(rng.integers(0, n) for n in arrays[k].shape))
                 for k in rng.integers(0, len(arrays), 20)]
        for k, idx in picks:
            a = arrays[k]
            old = a[idx]
            h = 1e-6 * max(1.0, abs(old))
            a[idx] = old + h
            hi = pinn.loss_and_grad(p, s, times, cfg)[0]
            a[idx] = old - h
            lo = pinn.loss_and_grad(p, s, times, cfg)[0]
            a[idx] = old
            fd = (hi - lo) / (2 * h)
            assert grads[k][idx] == pytest.approx(fd, rel=1e-5, abs=1e-9 * abs(hi)), (k, idx)

    def test_permutation_invariant(self):
        s = rc_system()
        cfg = pinn.TrainConfig(hidden=(5,))
        p = attached(s, [1, 5, s.n], jitter=0.2)
        times = np.linspace(0, s.t_stop, 17)
        shuffled = np.random.default_rng(4).permutation(times)
        a = pinn.loss_and_grad(p, s, times, cfg)[0]
        b = pinn.loss_and_grad(p, s, shuffled, cfg)[0]
        assert a == pytest.approx(b, rel=1e-14)

    def test_trivial_equilibrium_has_zero_loss(self):
        s = build_system(parse(case_text("ringosc5").replace("dc 1", "dc 0").replace(".ic v(n1)=1\n", "")))
        cfg = pinn.TrainConfig(ic_weight=0.0, ic_mode="hard", hidden=(4,))
        p = pinn.attach_system(pinn.init_network([1, 4, s.n], 0), s, np.zeros(s.n), "hard")
        p.weights[-1][:] = 0.0
        value, _, _ = pinn.loss_and_grad(p, s, np.linspace(0, s.t_stop, 11), cfg)
        assert value == 0.0

    def test_causal_weights(self):
        rows = [np.array([1.0, 2.0, 0.0, 3.0]), 1.0]  # a constant row broadcasts
        w = pinn.causal_weights(rows, 4, 2.0)
        before = np.array([0.0, 2.0, 2.0 + 5.0, 2.0 + 5.0 + 1.0])  # per point: 2, 5, 1, 10
        np.testing.assert_allclose(w, np.exp(-2.0 * before / 4), rtol=1e-15)
        np.testing.assert_allclose(pinn.causal_weights([x * x for x in rows], 4, 2.0, squared=True), w)
        assert pinn.causal_weights(rows, 4, 0.0) is None

    def test_causal_gradient_holds_weights_fixed(self):
        # The gradient is that of the weighted loss with the weights frozen.
        s = rc_system()
        cfg = pinn.TrainConfig(hidden=(4,), ic_weight=0.0, causal=50.0)
        p = attached(s, [1, 4, s.n], jitter=0.5)
        times = np.linspace(0, s.t_stop, 7)
        _, grads, _ = pinn.loss_and_grad(p, s, times, cfg)
        tau = times / s.t_stop
        o, do, _ = pinn._forward(p, tau)
        u, du = pinn._map_outputs(p, tau, o, do)
        w = pinn.causal_weights(s.residual(list(u.T), list(du.T), times), times.size, cfg.causal)

        def frozen():
            o, do, _ = pinn._forward(p, tau)
            u, du = pinn._map_outputs(p, tau, o, do)
            rows = s.residual(list(u.T), list(du.T), times)
            return sum(float(np.sum(w * np.asarray(r) ** 2)) for r in rows) / (times.size * s.n)

        b = p.biases[0]
        for j in range(b.size):
            old, h = b[j], 1e-6
            b[j] = old + h
            hi = frozen()
            b[j] = old - h
            lo = frozen()
            b[j] = old
            assert grads[len(p.weights)][j] == pytest.approx((hi - lo) / (2 * h), rel=1e-5, abs=1e-10)

    def test_soft_ic_term(self):
        s = rc_system()
        cfg = pinn.TrainConfig(hidden=(4,))
        p = attached(s, [1, 4, s.n], jitter=0.3)
        times = np.linspace(0, s.t_stop, 5)
        with_ic = pinn.loss_and_grad(p, s, times, cfg)[0]
        without = pinn.loss_and_grad(p, s, times, pinn.TrainConfig(hidden=(4,), ic_weight=0.0))[0]
        o0 = pinn._forward(p, np.zeros(1), tangents=False)[0][0]
        assert with_ic - without == pytest.approx(100.0 * np.mean(o0 ** 2), rel=1e-12)

    def test_prefit_rc_solution(self):
        # The residual of a linear circuit is affine in the output layer, so the
        # loss minimiser over that layer is a linear least-squares solution.
        s = rc_system()
        cfg = pinn.TrainConfig(hidden=(40,))
        p = pinn.attach_system(pinn.init_network([1, 40, s.n], 0), s, dc_operating_point(s), "soft")
        rng = np.random.default_rng(0)
        p.weights[0][:] = rng.uniform(-4, 4, p.weights[0].shape)
        p.biases[0][:] = rng.uniform(-4, 4, p.biases[0].shape)
        times = np.linspace(0, s.t_stop, 201)

        def rows(theta):
            p.weights[1][:] = theta[:-s.n].reshape(p.weights[1].shape)
            p.biases[1][:] = theta[-s.n:]
            tau = times / s.t_stop
            o, do, _ = pinn._forward(p, tau)
            u, du = pinn._map_outputs(p, tau, o, do)
            r = np.array(s.residual(list(u.T), list(du.T), times)).ravel() / np.sqrt(times.size * s.n)
            o0 = pinn._forward(p, np.zeros(1), tangents=False)[0][0]
            return np.concatenate([r, np.sqrt(cfg.ic_weight / s.n) * o0])

        m = p.weights[1].size + s.n
        base = rows(np.zeros(m))
        cols = np.stack([rows(e) - base for e in np.eye(m)], axis=1)
        theta = np.linalg.lstsq(cols, -base, rcond=None)[0]
        rows(theta)
        value = pinn.loss_and_grad(p, s, times, cfg)[0]
        assert value <= 1e-8


class TestOutputScales:
    def test_amplifier_scales_follow_signal(self):
        s = build_system(parse(case_text("amplifier")))
        sc = dict(zip(s.names, pinn.output_scales(s, dc_operating_point(s))))
        assert sc["v(g)"] == pytest.approx(0.1)
        assert 0.3 < sc["v(d)"] < 0.7  # small-signal gain of the stage
        assert sc["v(vdd)"] == pytest.approx(pinn.SWING_FLOOR * 5.0)

    def test_undriven_circuit_keeps_static_scales_off_the_rails(self):
        s = build_system(parse(case_text("ringosc5")))
        sc = pinn.output_scales(s, dc_operating_point(s))
        pinned = s.source_pinned()
        np.testing.assert_array_equal(sc[~pinned], s.scales[~pinned])
        np.testing.assert_array_equal(sc[pinned], pinn.SWING_FLOOR * s.scales[pinned])

    def test_scales_positive(self):
        for name in CASES:
            s = build_system(parse(case_text(name)))
            assert np.all(pinn.output_scales(s, dc_operating_point(s)) > 0)


class TestTrain:
    def test_deterministic_history(self):
        s = rc_system()
        cfg = pinn.TrainConfig(epochs=30, hidden=(8, 8), n_collocation=51)
        a, b = pinn.train(s, cfg), pinn.train(s, cfg)
        assert a.history == b.history
        for x, y in zip(a.params.arrays(), b.params.arrays()):
            np.testing.assert_array_equal(x, y)

    def test_best_params_and_history(self):
        s = rc_system()
        res = pinn.train(s, pinn.TrainConfig(epochs=60, hidden=(8, 8), n_collocation=51))
        assert len(res.history) == 60
        assert res.best_loss == min(res.history) < res.history[0]
        times = pinn.collocation_times(s, pinn.TrainConfig(n_collocation=51))
        value = pinn.loss_and_grad(res.params, s, times, pinn.TrainConfig(hidden=(8, 8)))[0]
        assert value == pytest.approx(res.best_loss, rel=1e-12)
        params, history = res
        assert history is res.history

    def test_hard_mode_exact_at_start(self):
        s = rc_system()
        res = pinn.train(s, pinn.TrainConfig(epochs=20, hidden=(8,), n_collocation=21, ic_mode="hard"))
        w = pinn.infer(res.params, s, [0.0])
        np.testing.assert_array_equal([w[n][0] for n in s.names], dc_operating_point(s))

    def test_random_resampling_keeps_origin(self):
        s = rc_system()
        cfg = pinn.TrainConfig(n_collocation=11, resample="uniform_random")
        t = pinn.collocation_times(s, cfg, np.random.default_rng(0))
        assert t[0] == 0.0 and t.size == 11 and np.all(np.diff(t) >= 0) and t[-1] <= s.t_stop

    def test_non_finite_parameters(self):
        s = rc_system()
        p = pinn.init_network([1, 4, s.n], 0)
        p.weights[0][0, 0] = np.nan
        with pytest.raises(NonFiniteError) as info:
            pinn.train(s, pinn.TrainConfig(epochs=3, hidden=(4,), n_collocation=5), params=p)
        assert info.value.epoch == 0

    def test_wrong_output_count(self):
        with pytest.raises(ConfigError):
            pinn.train(rc_system(), pinn.TrainConfig(epochs=1), params=pinn.init_network([1, 4, 2], 0))

    def test_soft_ic_consistency_at_large_weight(self):
        s = rc_system()
        cfg = pinn.TrainConfig(epochs=1500, hidden=(16, 16), n_collocation=201, ic_weight=1e4)
        res = pinn.train(s, cfg)
        v0 = pinn.infer(res.params, s, [0.0])["v(out)"][0]
        assert abs(v0) <= 0.01 * s.scales[1]


class TestAdam:
    def test_first_step_is_lr_times_sign(self):
        x = np.array([1.0, -2.0, 3.0])
        opt = pinn.Adam([x], lr=0.1)
        opt.step([x], [np.array([4.0, -0.5, 0.0])])
        np.testing.assert_allclose(x, [0.9, -1.9, 3.0], rtol=1e-7)

    def test_minimises_quadratic(self):
        x = np.array([5.0])
        opt = pinn.Adam([x], lr=0.1)
        for _ in range(2000):
            opt.step([x], [2 * (x - 1.0)])
        assert x[0] == pytest.approx(1.0, abs=1e-3)


class TestInfer:
    def test_matches_training_primals(self):
        s = rc_system()
        cfg = pinn.TrainConfig(hidden=(8, 8))
        p = attached(s, [1, 8, 8, s.n], jitter=0.1)
        times = pinn.collocation_times(s, cfg)
        _, _, u = pinn.loss_and_grad(p, s, times, cfg)
        w = pinn.infer(p, s, times)
        np.testing.assert_allclose(np.stack([w[n] for n in s.names], axis=1), u, rtol=0, atol=1e-12)

    def test_last_epoch_primals(self):
        s = rc_system()
        res = pinn.train(s, pinn.TrainConfig(epochs=1, hidden=(8,), n_collocation=21))
        w = pinn.infer(res.params, s, pinn.collocation_times(s, pinn.TrainConfig(n_collocation=21)))
        np.testing.assert_allclose(np.stack([w[n] for n in s.names], axis=1), res.last_u, atol=1e-12)

    def test_empty(self):
        s = rc_system()
        w = pinn.infer(attached(s, [1, 4, s.n]), s, [])
        assert len(w) == 0 and w.names == s.names
