"""Tests of the temporal convolutional network and its attention fusion."""
import math

import numpy as np
import pytest

import touchtools.tacn as tacn
import touchtools.tensor as tn
from touchtools.errors import ConfigError
from touchtools.errors import DimensionError
from touchtools.gradcheck import check_gradients


def set_conv(params, prefix, v, bias):
    v = np.asarray(v, dtype=np.float64)
    params[f"{prefix}.v"] = tn.parameter(v)
    params[f"{prefix}.g"] = tn.parameter(np.sqrt(np.sum(v**2, axis=(1, 2))))
    params[f"{prefix}.bias"] = tn.parameter(np.full(v.shape[0], bias))


def positive_params(cfg, rng):
    """Parameters for which every activation stays positive."""
    params = tacn.init_tacn({}, cfg, rng)
    for name in list(params):
        if name.endswith(".v"):
            prefix = name[:-2]
            set_conv(params, prefix,
                     rng.uniform(0.5, 1.5, size=params[name].shape), 0.0)
    return params


class TestResidualBlock:
    def test_zero_weights_pass_input(self, rng):
        params = {}
        set_conv(params, "b.conv1", np.zeros((3, 3, 4)), 0.0)
        set_conv(params, "b.conv2", np.zeros((3, 3, 4)), 0.0)
        params["b.conv1.g"] = tn.parameter(np.zeros(3))
        params["b.conv2.g"] = tn.parameter(np.zeros(3))
        x = rng.normal(size=(3, 9))
        out = tacn.residual_block(tn.Tensor(x), params, "b", 2)
        np.testing.assert_allclose(out.data, x, atol=1e-6)

    def test_hand_trace(self):
        params = {}
        set_conv(params, "b.conv1", [[[1.0, 0.5]]], -1.0)
        set_conv(params, "b.conv2", [[[2.0, -1.0]]], 0.5)
        x = tn.Tensor([[1.0, -2.0, 3.0, 0.5]])
        out = tacn.residual_block(x, params, "b", 1)
        # conv1: [0, -2.5, 1, 1] -> relu [0, 0, 1, 1]
        # conv2: [0.5, 0.5, 2.5, 1.5]
        np.testing.assert_allclose(out.data, [[1.5, -1.5, 5.5, 2.0]],
                                   atol=1e-5)

    def test_causal(self, rng):
        cfg = tacn.TacnConfig(num_inputs=3, num_channels=(4,), kernel=3,
                              attention=False)
        params = tacn.init_tacn({}, cfg, rng)
        x = rng.normal(size=(3, 12))
        base = tacn.residual_block(tn.Tensor(x), params, "tacn.0", 1).data
        x[:, -1] += 3.0
        moved = tacn.residual_block(tn.Tensor(x), params, "tacn.0", 1).data
        np.testing.assert_array_equal(base[:, :-1], moved[:, :-1])

    def test_downsample_skip(self, rng):
        cfg = tacn.TacnConfig(num_inputs=3, num_channels=(5,), kernel=3)
        params = tacn.init_tacn({}, cfg, rng)
        assert params["tacn.0.downsample.weight"].shape == (5, 3)
        out = tacn.residual_block(tn.Tensor(rng.normal(size=(3, 7))),
                                  params, "tacn.0", 1)
        assert out.shape == (5, 7)


class TestWeightNorm:
    def test_norm_equals_gain(self, rng):
        v = rng.normal(size=(4, 3, 2))
        g = np.array([1.0, 2.0, 0.5, 3.0])
        w = tacn.weight_norm(v, g).data
        np.testing.assert_allclose(np.sqrt((w**2).sum(axis=(1, 2))), g,
                                   rtol=1e-5)

    def test_gain_shape(self, rng):
        with pytest.raises(DimensionError):
            tacn.weight_norm(rng.normal(size=(4, 3, 2)), np.ones(3))

    def test_init_keeps_initial_kernel(self, rng):
        params = tacn.init_conv({}, "c", 2, 3, 4, rng)
        w = tacn.weight_norm(params["c.v"], params["c.g"]).data
        np.testing.assert_allclose(w, params["c.v"].data, rtol=1e-4)


class TestTacnForward:
    def test_default_shape(self, rng):
        cfg = tacn.TacnConfig()
        params = tacn.init_tacn({}, cfg, rng)
        out = tacn.tacn_forward(rng.normal(size=(32, 64)), params, cfg)
        assert out.shape == (32, 128)

    def test_receptive_field(self, rng):
        cfg = tacn.TacnConfig(num_inputs=2, num_channels=(2, 2), kernel=4,
                              dropout=0.0, attention=False)
        assert cfg.receptive_field() == 19
        params = positive_params(cfg, rng)
        x = np.ones((30, 2))
        last = tacn.tacn_forward(x, params, cfg).data[-1]

        near = x.copy()
        near[29 - 18] += 1.0
        assert not np.allclose(tacn.tacn_forward(near, params, cfg)
                               .data[-1], last)

        far = x.copy()
        far[29 - 19] += 1.0
        np.testing.assert_array_equal(
            tacn.tacn_forward(far, params, cfg).data[-1], last)

    def test_dilations_double(self, rng):
        cfg = tacn.TacnConfig(num_inputs=1, num_channels=(1, 1, 1), kernel=2,
                              dropout=0.0, attention=False)
        params = positive_params(cfg, rng)
        x = np.ones((20, 1))
        last = tacn.tacn_forward(x, params, cfg).data[-1]
        # lags 2 * (1 + 2 + 4) = 14 reach the last output, 15 doesn't
        assert cfg.receptive_field() == 15
        x[19 - 15] += 1.0
        np.testing.assert_array_equal(
            tacn.tacn_forward(x, params, cfg).data[-1], last)

    def test_fusion_is_not_causal(self, rng):
        cfg = tacn.TacnConfig(num_inputs=2, num_channels=(4,), kernel=3,
                              heads=2)
        params = positive_params(cfg, rng)
        x = rng.uniform(0.5, 1.0, size=(8, 2))
        base = tacn.tacn_forward(x, params, cfg).data
        x[-1] += 2.0
        moved = tacn.tacn_forward(x, params, cfg).data
        assert not np.allclose(base[0], moved[0])

    def test_wrong_input_width(self, rng):
        cfg = tacn.TacnConfig(num_inputs=4, num_channels=(4,), kernel=4)
        params = tacn.init_tacn({}, cfg, rng)
        with pytest.raises(DimensionError):
            tacn.tacn_forward(np.zeros((10, 3)), params, cfg)

    def test_gradients(self, rng):
        cfg = tacn.TacnConfig(num_inputs=2, num_channels=(2, 3), kernel=2,
                              dropout=0.0, heads=1)
        params = positive_params(cfg, rng)
        x = rng.uniform(0.5, 1.5, size=(5, 2))
        v = params["tacn.0.conv1.v"].data.astype(np.float64)
        w = rng.normal(size=(5, 3))

        def fn(x, v):
            p = dict(params)
            p["tacn.0.conv1.v"] = v
            return (tacn.tacn_forward(x, p, cfg) * w).sum()

        res = check_gradients(fn, [x, v])
        assert res["ok"], res["errors"]

    def test_from_config(self, small_cfg):
        cfg = tacn.TacnConfig.from_config(small_cfg, attention=False)
        assert cfg.num_inputs == 16
        assert cfg.num_channels == (8, 16)
        assert cfg.out_channels == 16
        assert not cfg.attention


class TestFusion:
    def test_uniform_attention_adds_mean(self, rng):
        h = rng.normal(size=(6, 4))
        params = {"f.wq": tn.Tensor(np.zeros((4, 4))),
                  "f.wk": tn.Tensor(np.zeros((4, 4))),
                  "f.wv": tn.Tensor(np.eye(4)),
                  "f.wo": tn.Tensor(np.eye(4))}
        out = tacn.mha_fusion(tn.Tensor(h), params, "f", 1)
        np.testing.assert_allclose(out.data, h + h.mean(axis=0), atol=1e-5)

    def test_shape(self, rng):
        cfg = tacn.TacnConfig(num_inputs=2, num_channels=(8,), kernel=4,
                              heads=4)
        params = tacn.init_tacn({}, cfg, rng)
        out = tacn.mha_fusion(tn.Tensor(rng.normal(size=(5, 8))), params,
                              "tacn.fusion", 4)
        assert out.shape == (5, 8)

    def test_heads_must_divide_width(self, rng):
        cfg = tacn.TacnConfig(num_inputs=2, num_channels=(6,), kernel=4)
        params = tacn.init_tacn({}, cfg, rng)
        with pytest.raises(ConfigError):
            tacn.mha_fusion(tn.Tensor(np.ones((3, 6))), params,
                            "tacn.fusion", 4)


def test_receptive_field_formula():
    for k in tacn.KERNEL_CHOICES:
        cfg = tacn.TacnConfig(kernel=k)
        assert cfg.receptive_field() == 1 + 6 * (k - 1)
    assert math.isclose(tacn.TacnConfig(kernel=5).receptive_field(), 25)
