"""Network engine: forward oracles, finite-difference gradient checks,
update rules, checkpoint round-trips."""

import numpy as np
import pytest

from voltreg.nn import Mlp, load_mlp, save_mlp, soft_update


def fd_gradients(net, x, grad_out, h=1e-5):
    """Central finite differences of loss(theta) = <grad_out, net(x)> for
    every parameter; the anchor oracle for backward."""
    grads = []
    for k in range(len(net.w)):
        dw = np.zeros_like(net.w[k])
        for idx in np.ndindex(net.w[k].shape):
            orig = net.w[k][idx]
            net.w[k][idx] = orig + h
            up = float(np.sum(grad_out * net.forward(x)))
            net.w[k][idx] = orig - h
            dn = float(np.sum(grad_out * net.forward(x)))
            net.w[k][idx] = orig
            dw[idx] = (up - dn) / (2 * h)
        db = np.zeros_like(net.b[k])
        for idx in np.ndindex(net.b[k].shape):
            orig = net.b[k][idx]
            net.b[k][idx] = orig + h
            up = float(np.sum(grad_out * net.forward(x)))
            net.b[k][idx] = orig - h
            dn = float(np.sum(grad_out * net.forward(x)))
            net.b[k][idx] = orig
            db[idx] = (up - dn) / (2 * h)
        grads.append((dw, db))
    return grads


def fd_input_gradient(net, x, grad_out, h=1e-5):
    gx = np.zeros_like(x)
    for i in range(len(x)):
        xp = x.copy()
        xp[i] += h
        xm = x.copy()
        xm[i] -= h
        gx[i] = (np.sum(grad_out * net.forward(xp))
                 - np.sum(grad_out * net.forward(xm))) / (2 * h)
    return gx


def assert_close(got, want, rtol=1e-4, atol=1e-7):
    assert np.all(np.abs(got - want) <= atol + rtol * np.abs(want)), \
        np.max(np.abs(got - want))


def straight_line_forward(net, x):
    """Independent re-implementation of the layered map."""
    a = x
    for w, b, act, sc in zip(net.w, net.b, net.acts, net.scales):
        z = a @ w + b
        if act == "tanh":
            a = np.tanh(z)
        elif act == "scaled_tanh":
            a = sc * np.tanh(z)
        else:
            a = z
    return a


class TestForward:
    def test_identity_layer(self):
        net = Mlp([np.eye(3)], [np.zeros(3)], ["linear"])
        x = np.array([0.3, -1.2, 4.0])
        assert np.array_equal(net.forward(x), x)

    def test_constant_tanh(self):
        c = np.array([0.7, -0.2])
        net = Mlp([np.zeros((4, 2))], [c], ["tanh"])
        for x in (np.zeros(4), np.ones(4), np.arange(4.0)):
            assert np.allclose(net.forward(x), np.tanh(c), atol=1e-15)

    def test_matches_straight_line_reimplementation(self):
        rng = np.random.default_rng(8)
        net = Mlp.init([5, 7, 3], seed=1)
        for _ in range(10):
            x = rng.normal(size=5)
            assert np.max(np.abs(net.forward(x) - straight_line_forward(net, x))) \
                < 1e-12

    def test_batch_matches_loop(self):
        net = Mlp.init([4, 6, 2], seed=2)
        rng = np.random.default_rng(3)
        xb = rng.normal(size=(9, 4))
        yb = net.forward(xb)
        for i in range(9):
            assert np.allclose(yb[i], net.forward(xb[i]), atol=1e-15)

    def test_dimension_mismatch(self):
        net = Mlp.init([4, 2], seed=0)
        with pytest.raises(ValueError):
            net.forward(np.zeros(5))


class TestBackward:
    @pytest.mark.parametrize("out_act,out_scale", [
        ("linear", 1.0),        # surrogate / critic head
        ("scaled_tanh", 1.0),   # actor head
    ])
    def test_gradients_match_finite_differences(self, out_act, out_scale):
        for seed in range(20):
            rng = np.random.default_rng(seed)
            net = Mlp.init([5, 8, 3], out_act=out_act, seed=seed,
                           out_scale=out_scale)
            x = rng.normal(size=5)
            grad_out = rng.normal(size=3)
            _, cache = net.forward_cached(x)
            grads, grad_in = net.backward(cache, grad_out)
            want = fd_gradients(net, x, grad_out)
            for (dw, db), (fw, fb) in zip(grads, want):
                assert_close(dw, fw)
                assert_close(db, fb)
            assert_close(grad_in, fd_input_gradient(net, x, grad_out))

    def test_zero_grad_out(self):
        net = Mlp.init([3, 4, 2], seed=5)
        _, cache = net.forward_cached(np.ones(3))
        grads, grad_in = net.backward(cache, np.zeros(2))
        assert all(np.all(dw == 0) and np.all(db == 0) for dw, db in grads)
        assert np.all(grad_in == 0)

    def test_linear_layer_closed_form(self):
        net = Mlp([np.eye(3)], [np.zeros(3)], ["linear"])
        x = np.array([1.0, 2.0, 3.0])
        g = np.array([0.5, -1.0, 2.0])
        _, cache = net.forward_cached(x)
        grads, _ = net.backward(cache, g)
        assert np.allclose(grads[0][0], np.outer(x, g))
        assert np.allclose(grads[0][1], g)

    def test_missing_cache_rejected(self):
        net = Mlp.init([3, 2], seed=0)
        with pytest.raises(ValueError):
            net.backward(None, np.zeros(2))


class TestSgdStep:
    def test_explicit_arithmetic(self):
        net = Mlp([np.array([[1.0]])], [np.array([0.0])], ["linear"])
        net.sgd_step([(np.array([[2.0]]), np.array([0.0]))], lr=0.1)
        assert net.w[0][0, 0] == pytest.approx(0.8)

    def test_zero_lr_rejected(self):
        net = Mlp.init([2, 2], seed=0)
        grads = [(np.zeros((2, 2)), np.zeros(2))]
        with pytest.raises(ValueError):
            net.sgd_step(grads, lr=0.0)

    def test_step_reduces_quadratic_loss(self):
        # fit y = 0 from a nonzero start; loss (w x)^2 must drop
        net = Mlp([np.array([[2.0]])], [np.array([0.0])], ["linear"])
        x = np.array([1.0])

        def loss():
            return float(net.forward(x)[0] ** 2)

        before = loss()
        yhat, cache = net.forward_cached(x)
        grads, _ = net.backward(cache, 2.0 * yhat)
        net.sgd_step(grads, lr=0.05)
        assert loss() < before

    def test_nan_gradient_aborts(self):
        net = Mlp.init([2, 2], seed=0)
        grads = [(np.full((2, 2), np.nan), np.zeros(2))]
        with pytest.raises(FloatingPointError):
            net.sgd_step(grads, lr=0.1)


class TestSoftUpdate:
    def test_tau_one_copies_exactly(self):
        online = Mlp.init([3, 4, 2], seed=1)
        target = Mlp.init([3, 4, 2], seed=2)
        soft_update(target, online, tau=1.0)
        for tw, ow in zip(target.w, online.w):
            assert np.array_equal(tw, ow)

    def test_midpoint(self):
        online = Mlp([np.full((1, 1), 2.0)], [np.array([2.0])], ["linear"])
        target = Mlp([np.zeros((1, 1))], [np.array([0.0])], ["linear"])
        soft_update(target, online, tau=0.5)
        assert target.w[0][0, 0] == 1.0
        assert target.b[0][0] == 1.0

    def test_geometric_contraction(self):
        online = Mlp.init([4, 5, 2], seed=3)
        target = Mlp.init([4, 5, 2], seed=4)
        tau = 0.01

        def dist():
            return np.sqrt(sum(np.sum((tw - ow) ** 2)
                               for tw, ow in zip(target.w, online.w)))

        d = dist()
        for _ in range(50):
            soft_update(target, online, tau)
            d_new = dist()
            assert d_new <= (1 - tau) * d + 1e-12
            d = d_new

    def test_identity_fixed_point(self):
        online = Mlp.init([3, 3], seed=6)
        target = online.copy()
        soft_update(target, online, tau=0.3)
        for tw, ow in zip(target.w, online.w):
            assert np.allclose(tw, ow, atol=1e-15)

    def test_architecture_mismatch(self):
        with pytest.raises(ValueError):
            soft_update(Mlp.init([3, 2], seed=0), Mlp.init([3, 3], seed=0), 0.5)


class TestCheckpoint:
    def test_round_trip_bit_exact(self, tmp_path):
        net = Mlp.init([6, 9, 4], out_act="scaled_tanh", seed=11)
        path = tmp_path / "net.npz"
        save_mlp(net, path, extras={"stats": np.arange(3.0)},
                 meta={"kind": "actor"})
        loaded, extras, meta = load_mlp(path)
        rng = np.random.default_rng(0)
        for _ in range(100):
            x = rng.normal(size=6)
            assert np.array_equal(net.forward(x), loaded.forward(x))
        assert np.array_equal(extras["stats"], np.arange(3.0))
        assert meta["kind"] == "actor"

    def test_truncated_file_rejected(self, tmp_path):
        net = Mlp.init([3, 2], seed=0)
        path = tmp_path / "net.npz"
        save_mlp(net, path)
        raw = path.read_bytes()
        path.write_bytes(raw[: len(raw) // 2])
        with pytest.raises(ValueError):
            load_mlp(path)

    def test_not_a_checkpoint(self, tmp_path):
        path = tmp_path / "junk.npz"
        np.savez(path, a=np.zeros(3))
        with pytest.raises(ValueError, match="version"):
            load_mlp(path)
