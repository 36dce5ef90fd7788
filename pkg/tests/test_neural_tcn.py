import numpy as np
import pytest

import gradcheck
from nasality_si.neural_tcn import BN_MOMENTUM, ModelConfig, build_model, mse_loss, param_count


def expected_param_count(cfg):
    """Closed-form count: conv weights + biases, plus BN gain and bias."""
    k, pre, hid = cfg.kernel_dilated, cfg.pre_filters, cfg.dilated_filters
    conv = lambda ci, co, kk: ci * co * kk + co  # noqa: E731
    total = conv(cfg.in_channels, pre, 1) + conv(pre, pre, 1) + 2 * pre * 2
    cin = pre
    for _ in cfg.dilations:
        total += conv(cin, hid, k) + 2 * hid
        cin = hid
    total += conv(hid, hid, 1) + conv(hid, hid, k) + 2 * 2 * hid
    return total + conv(hid, cfg.n_targets, 1)


@pytest.fixture(scope="module")
def small():
    return build_model(ModelConfig(in_channels=8, pre_filters=8, dilated_filters=8,
                                   n_targets=3, seed=1))


class TestConfig:
    def test_validation(self):
        with pytest.raises(ValueError):
            ModelConfig(precision="f16")
        with pytest.raises(ValueError):
            ModelConfig(pool_window=4)
        with pytest.raises(ValueError):
            ModelConfig(dilations=(4, 1))
        with pytest.raises(ValueError):
            ModelConfig(kernel_dilated=2)

    def test_dict_round_trip(self):
        cfg = ModelConfig(n_targets=1, seed=3)
        assert ModelConfig.from_dict(cfg.to_dict()) == cfg
        with pytest.raises(ValueError):
            ModelConfig.from_dict({"widht": 3})


class TestShapes:
    def test_param_count(self):
        m = build_model(ModelConfig())
        assert param_count(m) == expected_param_count(m.config) == 792325
        m1 = build_model(ModelConfig(n_targets=1))
        assert param_count(m1) == 792325 - 4 * 257

    @pytest.mark.parametrize("b", [1, 3])
    def test_forward_shape_small(self, small, b):
        y = small.forward(np.zeros((b, 8, 250)), "eval")
        assert y.shape == (b, 3, 200)
        assert np.all(np.abs(y) <= 1)

    def test_bad_input(self, small):
        with pytest.raises(ValueError):
            small.forward(np.zeros((2, 8, 249)))
        with pytest.raises(ValueError):
            small.forward(np.zeros((1, 8, 250)), "train")
        with pytest.raises(ValueError):
            small.forward(np.zeros((2, 8, 250)), "test")

    def test_backward_requires_train_forward(self, small):
        small.forward(np.zeros((2, 8, 250)), "eval")
        with pytest.raises(RuntimeError):
            small.backward(np.zeros((2, 3, 200)))


class TestBatchNorm:
    def test_running_stats_update(self):
        m = build_model(ModelConfig(in_channels=8, pre_filters=8, dilated_filters=8, n_targets=2,
                                    precision="f64"))
        x = np.random.default_rng(0).standard_normal((4, 8, 250))
        m.forward(x, "train")
        # Oracle for the first BN: statistics of the first conv's output.
        w, b = m.params["c1.weight"][:, :, 0], m.params["c1.bias"]
        h = np.einsum("oc,bct->obt", w, x) + b[:, None, None]
        mean = h.mean(axis=(1, 2))
        var = h.reshape(8, -1).var(axis=1, ddof=1)
        np.testing.assert_allclose(m.buffers["bn_c1.running_mean"], BN_MOMENTUM * mean, atol=1e-12)
        np.testing.assert_allclose(m.buffers["bn_c1.running_var"],
                                   1 - BN_MOMENTUM + BN_MOMENTUM * var, atol=1e-12)

    def test_eval_mode_independent_of_batch(self, small):
        x = np.random.default_rng(1).standard_normal((3, 8, 250)).astype(np.float32)
        full = small.forward(x, "eval")
        single = small.forward(x[1:2], "eval")
        np.testing.assert_allclose(full[1:2], single, rtol=1e-5, atol=1e-6)


class TestLoss:
    def test_value_and_mask(self):
        pred = np.zeros((2, 1, 4))
        tgt = np.array([[[1.0, 1.0, 1.0, 1.0]], [[2.0, 2.0, 0.0, 0.0]]])
        mask = np.array([[True, True, False, False], [True, True, True, True]])
        loss, grad = mse_loss(pred, tgt, mask)
        assert loss == pytest.approx((1 + 1 + 4 + 4) / 6)
        assert np.all(grad[0, 0, 2:] == 0)
        np.testing.assert_allclose(grad[1, 0], [-4 / 6, -4 / 6, 0, 0])

    def test_empty_mask(self):
        with pytest.raises(ValueError):
            mse_loss(np.zeros((1, 1, 3)), np.zeros((1, 1, 3)), np.zeros((1, 3), bool))


class TestGradients:
    def test_frozen_masks_match_natural_forward(self):
        m = gradcheck.small_model()
        x = np.random.default_rng(2).standard_normal((2, 8, 250))
        a = m.forward(x, "train")
        m.frozen_relu_masks = m.relu_masks()
        b = m.forward(x, "train")
        m.frozen_relu_masks = None
        assert a.tobytes() == b.tobytes()

    def test_gradcheck_frozen(self):
        rep = gradcheck.check(gradcheck.small_model(seed=5), per_layer=30, seed=5)
        assert max(e for e, _ in rep.values()) <= 1e-5

    def test_gradcheck_unfrozen_away_from_kinks(self):
        """Plain finite differences where no ReLU flips between the two
        evaluations must also match."""
        m = gradcheck.small_model(seed=2)
        rng = np.random.default_rng(3)
        x = rng.standard_normal((2, 8, 250))
        y = rng.uniform(-0.9, 0.9, (2, 5, 200))
        loss, g = mse_loss(m.forward(x, "train"), y)
        grads = {k: v.copy() for k, v in m.backward(g).items()}
        checked = 0
        for name in ("c5.weight", "bn_c4.gain", "d3.weight", "c1.weight"):
            p = m.params[name]
            for i in rng.choice(p.size, 6, replace=False):
                old = p.flat[i]
                p.flat[i] = old + 1e-5
                lp = mse_loss(m.forward(x, "train"), y)[0]
                mp = m.relu_masks()
                p.flat[i] = old - 1e-5
                lm = mse_loss(m.forward(x, "train"), y)[0]
                mm = m.relu_masks()
                p.flat[i] = old
                if any((mp[k] != mm[k]).any() for k in mp):
                    continue
                num = (lp - lm) / 2e-5
                a = grads[name].flat[i]
                assert abs(a - num) / max(abs(a), abs(num), 1e-6) < 1e-5
                checked += 1
        assert checked >= 5


class TestState:
    def test_seeded_init(self):
        a = build_model(ModelConfig(seed=11, n_targets=1))
        b = build_model(ModelConfig(seed=11, n_targets=1))
        c = build_model(ModelConfig(seed=12, n_targets=1))
        assert all(np.array_equal(a.params[k], b.params[k]) for k in a.params)
        assert not np.array_equal(a.params["c1.weight"], c.params["c1.weight"])

    def test_state_dict_round_trip(self, small):
        other = build_model(ModelConfig(in_channels=8, pre_filters=8, dilated_filters=8,
                                        n_targets=3, seed=99))
        other.load_state_dict(small.state_dict())
        x = np.random.default_rng(4).standard_normal((2, 8, 250)).astype(np.float32)
        assert other.forward(x).tobytes() == small.forward(x).tobytes()

    def test_load_rejects_mismatch(self, small):
        state = dict(small.state_dict())
        state.pop("c5.bias")
        with pytest.raises(ValueError):
            small.load_state_dict(state)
        state = dict(small.state_dict())
        state["c5.bias"] = np.zeros(7)
        with pytest.raises(ValueError):
            small.load_state_dict(state)

    def test_precision(self):
        cfg = dict(in_channels=8, pre_filters=8, dilated_filters=8, n_targets=2)
        m32 = build_model(ModelConfig(**cfg, precision="f32"))
        m64 = build_model(ModelConfig(**cfg, precision="f64"))
        x = np.random.default_rng(5).standard_normal((2, 8, 250))
        y32, y64 = m32.forward(x), m64.forward(x)
        assert y32.dtype == np.float32 and y64.dtype == np.float64
        np.testing.assert_allclose(y32, y64, atol=1e-4)
