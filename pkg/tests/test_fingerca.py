"""Tests of channel attention."""
import numpy as np
import pytest

import touchtools.fingerca as fca
import touchtools.tensor as tn
from touchtools.errors import ParameterError
from touchtools.gradcheck import check_gradients


def gate_params(channels, fc2_bias, hidden=2):
    return {"fingerca.fc1.weight": tn.Tensor(np.zeros((channels, hidden))),
            "fingerca.fc1.bias": tn.Tensor(np.zeros(hidden)),
            "fingerca.fc2.weight": tn.Tensor(np.zeros((hidden, channels))),
            "fingerca.fc2.bias": tn.Tensor(fc2_bias)}


class TestDescriptor:
    def test_column_means(self):
        z = fca.channel_descriptor([[1.0, 3.0], [2.0, 4.0]])
        np.testing.assert_allclose(z.data, [1.5, 3.5])

    def test_constant_channel(self, rng):
        x = rng.normal(size=(7, 3))
        x[:, 1] = 2.5
        assert fca.channel_descriptor(x).data[1] == pytest.approx(2.5)

    def test_linear(self, rng):
        x = rng.normal(size=(5, 4))
        np.testing.assert_allclose(fca.channel_descriptor(3 * x).data,
                                   3 * fca.channel_descriptor(x).data,
                                   rtol=1e-5, atol=1e-6)


class TestRecalibrate:
    def test_open_gate_is_identity(self, rng):
        x = rng.normal(size=(6, 4))
        out = fca.recalibrate(x, gate_params(4, np.full(4, 40.0)))
        np.testing.assert_allclose(out.data, x, atol=1e-6)

    def test_half_gate(self):
        x = np.array([[2.0, 1.0], [4.0, 1.0]])
        out = fca.recalibrate(x, gate_params(2, np.zeros(2)))
        np.testing.assert_allclose(out.data[:, 0], [1.0, 2.0])

    def test_gate_is_constant_in_time(self, rng):
        params = fca.init_fingerca({}, 8, rng)
        x = rng.uniform(0.5, 2.0, size=(10, 8))
        ratio = fca.recalibrate(x, params).data / x
        np.testing.assert_allclose(ratio, np.broadcast_to(ratio[0], x.shape),
                                   rtol=1e-5)
        assert np.all((ratio > 0) & (ratio < 1))

    def test_channel_permutation(self, rng):
        params = fca.init_fingerca({}, 8, rng)
        x = rng.normal(size=(5, 8))
        perm = rng.permutation(8)
        permuted = {
            "fingerca.fc1.weight": tn.Tensor(
                params["fingerca.fc1.weight"].data[perm]),
            "fingerca.fc1.bias": params["fingerca.fc1.bias"],
            "fingerca.fc2.weight": tn.Tensor(
                params["fingerca.fc2.weight"].data[:, perm]),
            "fingerca.fc2.bias": tn.Tensor(
                params["fingerca.fc2.bias"].data[perm]),
        }
        a = fca.recalibrate(x, params).data[:, perm]
        b = fca.recalibrate(x[:, perm], permuted).data
        np.testing.assert_allclose(a, b, rtol=1e-5, atol=1e-6)

    def test_gradients(self, rng):
        params = fca.init_fingerca({}, 8, rng)
        params["fingerca.fc1.bias"] = tn.Tensor(np.ones(2))
        w1 = rng.normal(0, 0.1, size=(8, 2))
        x = rng.normal(size=(4, 8))
        w = rng.normal(size=(4, 8))

        def fn(x, w1):
            p = dict(params)
            p["fingerca.fc1.weight"] = w1
            return (fca.recalibrate(x, p) * w).sum()

        res = check_gradients(fn, [x, w1])
        assert res["ok"], res["errors"]

    def test_reduction_too_large(self, rng):
        with pytest.raises(ParameterError):
            fca.init_fingerca({}, 3, rng, reduction=4)

    def test_hidden_width(self, rng):
        params = fca.init_fingerca({}, 128, rng)
        assert params["fingerca.fc1.weight"].shape == (128, 32)
        assert params["fingerca.fc2.weight"].shape == (32, 128)
