"""Tests of masked autoencoder pretraining."""
import dataclasses
import math

import numpy as np
import pytest

import touchtools.layers as layers
import touchtools.metrics as metrics
import touchtools.tensor as tn
import touchtools.tmae as tmae
from touchtools.errors import ContractError
from touchtools.errors import DataError
from touchtools.errors import DimensionError
from touchtools.errors import DivergenceError
from touchtools.errors import ParameterError
from touchtools.gradcheck import check_gradients


@pytest.fixture
def params(small_cfg, rng):
    return tmae.init_tmae_params(small_cfg, rng)


class TestPositionalEncoding:
    def test_first_row(self):
        pe = tmae.positional_encoding(3, 6).data
        np.testing.assert_allclose(pe[0], [0, 1, 0, 1, 0, 1], atol=1e-7)

    def test_value(self):
        pe = tmae.positional_encoding(3, 6).data
        assert pe[1, 0] == pytest.approx(0.8415, abs=1e-4)
        assert pe[1, 1] == pytest.approx(math.cos(1.0), abs=1e-6)
        assert pe[2, 2] == pytest.approx(math.sin(2 / 10000 ** (2 / 6)),
                                         abs=1e-6)

    def test_range(self):
        pe = tmae.positional_encoding(50, 16).data
        assert pe.shape == (50, 16)
        assert np.all(np.abs(pe) <= 1.0)


class TestSplit:
    def split(self, d, valid=None, ratio=0.4, seed=0):
        valid = np.ones(d, dtype=bool) if valid is None else valid
        return tmae.split_visible_masked(
            tn.Tensor(np.arange(d * 2).reshape(d, 2)), np.arange(d), valid,
            ratio, np.random.default_rng(seed))

    def test_ratio(self):
        s = self.split(10)
        assert len(s.m_index) == 4 and len(s.v_index) == 6
        assert s.Z_m.shape == (4, 2)

    def test_small_ratio_masks_one(self):
        assert len(self.split(10, ratio=0.01).m_index) == 1

    def test_large_ratio_keeps_one_visible(self):
        valid = np.array([True, True, False])
        s = self.split(3, valid=valid, ratio=0.9)
        assert s.m_index.tolist() in ([0], [1])

    def test_partition_and_padding(self):
        rng = np.random.default_rng(5)
        for seed in range(1000):
            d = int(rng.integers(2, 12))
            valid = np.ones(d, dtype=bool)
            valid[-1] = bool(rng.integers(2)) or d == 2
            s = self.split(d, valid=valid, seed=seed)
            assert sorted(s.v_index.tolist() + s.m_index.tolist()) == \
                list(range(d))
            assert np.all(valid[s.m_index])
            assert s.T_m.tolist() == s.m_index.tolist()

    def test_one_valid_window(self):
        with pytest.raises(DataError):
            self.split(3, valid=np.array([True, False, False]))

    @pytest.mark.parametrize("ratio", [0.0, 1.0])
    def test_bad_ratio(self, ratio):
        with pytest.raises(ParameterError):
            self.split(4, ratio=ratio)

    def test_n_masked(self):
        assert tmae.n_masked(10, 0.4) == 4
        assert tmae.n_masked(5, 0.5) == 3
        assert tmae.n_masked(3, 0.0001) == 1


class TestEncoders:
    def test_encode_shape(self, params, small_cfg, rng):
        out = tmae.encode_visible(tn.Tensor(rng.normal(size=(5, 16))),
                                  params, small_cfg, rng=rng)
        assert out.shape == (5, 16)

    def test_momentum_matches_encoder_copy(self, params, small_cfg, rng):
        z = tn.Tensor(rng.normal(size=(4, 16)))
        a = tmae.encode_visible(z, params, small_cfg, training=False)
        b = tmae.momentum_encode(z, params, small_cfg)
        np.testing.assert_allclose(a.data, b.data, atol=1e-6)

    def test_momentum_is_deterministic_and_detached(self, params, small_cfg,
                                                    rng):
        z = tn.Tensor(rng.normal(size=(4, 16)), requires_grad=True)
        a = tmae.momentum_encode(z, params, small_cfg)
        b = tmae.momentum_encode(z, params, small_cfg)
        np.testing.assert_array_equal(a.data, b.data)
        assert not a.requires_grad

    def test_empty_inputs(self, params, small_cfg):
        empty = tn.Tensor(np.zeros((0, 16)))
        with pytest.raises(ContractError):
            tmae.momentum_encode(empty, params, small_cfg)
        with pytest.raises(ContractError):
            tmae.regress_masked(empty, tn.Tensor(np.zeros((2, 16))), params,
                                small_cfg)

    def test_regress_shape(self, params, small_cfg, rng):
        out = tmae.regress_masked(tn.Tensor(rng.normal(size=(6, 16))),
                                  tn.Tensor(rng.normal(size=(3, 16))),
                                  params, small_cfg, rng=rng)
        assert out.shape == (3, 16)

    def test_single_visible_weights_are_one(self, params, rng):
        _, w = layers.multi_head_attention(
            tn.Tensor(rng.normal(size=(3, 16))),
            tn.Tensor(rng.normal(size=(1, 16))), params,
            "regressor.0.attn", 2, return_weights=True)
        np.testing.assert_allclose(w, 1.0, atol=1e-6)

    def test_predict_codewords_is_codebook(self, params, rng):
        r = rng.normal(size=(3, 16))
        r[2] = r[0]
        out = tmae.predict_codewords(tn.Tensor(r), params).data
        expected = r @ params["codebook.weight"].data + \
            params["codebook.bias"].data
        assert out.shape == (3, 12)
        np.testing.assert_allclose(out, expected, rtol=1e-5, atol=1e-5)
        np.testing.assert_array_equal(out[0], out[2])


class TestGradientPaths:
    def test_no_gradient_into_momentum(self, params, small_cfg,
                                       tiny_processed, rng):
        out = tmae.sample_loss(tiny_processed[0], params, small_cfg, rng)
        (out.L_align + out.L_pred).backward()
        for name, p in params.items():
            if name.startswith("momentum."):
                assert p.grad is None, name
        assert params["mask_token"].grad is not None
        assert params["encoder.0.attn.wq"].grad is not None
        assert params["regressor.0.ff1.weight"].grad is not None
        assert params["proj.weight"].grad is not None

    def test_prediction_targets_are_token_ids(self, params, small_cfg,
                                              tiny_processed, rng):
        out = tmae.sample_loss(tiny_processed[0], params, small_cfg, rng)
        assert out.targets.dtype == np.int64
        assert out.logits.shape == (out.targets.size, small_cfg.vocab)
        expected = tn.cross_entropy(tn.Tensor(out.logits), out.targets)
        assert out.L_pred.item() == pytest.approx(expected.item(), abs=1e-5)

    def test_usage_term_reaches_tokenizer(self, params, small_cfg,
                                          tiny_processed, rng):
        out = tmae.sample_loss(tiny_processed[0], params, small_cfg, rng)
        n_valid = int(np.sum(tiny_processed[0].window_valid))
        assert out.probs.shape == (n_valid, small_cfg.vocab)
        assert out.tokens.shape == (n_valid,)
        tmae.code_usage_loss(out.probs).backward()
        assert np.any(params["codebook.weight"].grad != 0)
        assert np.any(params["proj.weight"].grad != 0)

    def test_trainable_excludes_momentum(self, params):
        names = tmae.trainable(params)
        assert not any(n.startswith("momentum.") for n in names)
        assert "codebook.weight" in names


class TestMomentumUpdate:
    def one(self, value):
        return {"x.w": tn.Tensor(np.full((2, 2), value))}

    def test_single_step(self):
        m = tmae.momentum_update(self.one(1.0), self.one(0.0), 0.99)
        np.testing.assert_allclose(m["x.w"].data, 0.99, rtol=1e-6)

    def test_two_steps(self):
        m, e = self.one(1.0), self.one(0.0)
        tmae.momentum_update(m, e, 0.99)
        tmae.momentum_update(m, e, 0.99)
        np.testing.assert_allclose(m["x.w"].data, 0.9801, rtol=1e-6)

    def test_mu_one_keeps_values(self):
        m = tmae.momentum_update(self.one(0.3), self.one(5.0), 1.0)
        np.testing.assert_array_equal(m["x.w"].data, np.float32(0.3))

    @pytest.mark.parametrize("mu", [0.9, 0.99, 1.0])
    def test_drift_bound(self, mu, rng):
        e = {"encoder.a": tn.Tensor(rng.normal(size=5))}
        m = {"momentum.a": tn.Tensor(rng.normal(size=5))}
        gap = m["momentum.a"].data - e["encoder.a"].data
        for _ in range(10):
            tmae.momentum_update(m, e, mu)
        np.testing.assert_allclose(m["momentum.a"].data - e["encoder.a"].data,
                                   mu ** 10 * gap, atol=1e-5)

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            tmae.momentum_update(self.one(1.0),
                                 {"y.w": tn.Tensor(np.zeros(3))}, 0.5)

    def test_unknown_name(self):
        with pytest.raises(DimensionError):
            tmae.momentum_update(self.one(1.0),
                                 {"x.v": tn.Tensor(np.zeros((2, 2)))}, 0.5)

    def test_bad_mu(self):
        with pytest.raises(ParameterError):
            tmae.momentum_update(self.one(1.0), self.one(0.0), 1.5)


class TestLosses:
    def test_alignment(self):
        assert tmae.alignment_loss([[1.0, 0.0]], [[0.0, 0.0]]).item() == \
            pytest.approx(0.5)
        x = np.ones((3, 4))
        assert tmae.alignment_loss(x, x).item() == 0.0

    def test_alignment_shape(self):
        with pytest.raises(DimensionError):
            tmae.alignment_loss(np.zeros((2, 3)), np.zeros((3, 2)))

    def test_weighted_sum(self):
        total, rec = tmae.pretrain_loss(0.2, 0.7, 1.0, 1.0)
        assert total.item() == pytest.approx(0.9, abs=1e-6)
        total, rec = tmae.pretrain_loss(0.2, 0.7, 1.0, 0.0)
        assert total.item() == pytest.approx(0.2, abs=1e-6)
        assert rec.L_pred == pytest.approx(0.7, abs=1e-6)

    def test_perfect_ranking(self):
        logits = np.eye(5)[[1, 3, 4]] * 10
        _, rec = tmae.pretrain_loss(0.0, 0.0, logits=logits,
                                    targets=[1, 3, 4])
        assert rec.hits1 == 1.0
        assert rec.ndcg10 == pytest.approx(1.0)

    def test_negative_weight(self):
        with pytest.raises(ParameterError):
            tmae.pretrain_loss(0.1, 0.1, alpha=-1.0)

    def test_prediction_loss_oracle(self, rng):
        logits = rng.normal(size=(6, 12))
        targets = rng.integers(0, 12, size=6)
        shifted = logits - logits.max(axis=1, keepdims=True)
        logp = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
        expected = -logp[np.arange(6), targets].mean()
        got = tn.cross_entropy(tn.Tensor(logits), targets).item()
        assert got == pytest.approx(expected, abs=1e-5)


class TestCodeUsage:
    def test_even_use_is_zero(self):
        probs = np.eye(6)[[0, 1, 2, 3, 4, 5, 0, 1, 2, 3, 4, 5]]
        assert tmae.code_usage_loss(probs).item() == pytest.approx(0.0,
                                                                   abs=1e-6)
        uniform = np.full((3, 6), 1 / 6)
        assert tmae.code_usage_loss(uniform).item() == pytest.approx(
            0.0, abs=1e-6)

    def test_single_codeword_is_log_vocab(self):
        probs = np.eye(8)[[2, 2, 2, 2]]
        assert tmae.code_usage_loss(probs).item() == pytest.approx(
            math.log(8), abs=1e-5)

    def test_half_and_half(self):
        probs = np.eye(4)[[0, 1, 0, 1]]
        assert tmae.code_usage_loss(probs).item() == pytest.approx(
            math.log(2), abs=1e-5)

    def test_bad_shape(self):
        with pytest.raises(DimensionError):
            tmae.code_usage_loss(np.ones(4) / 4)

    def test_step_spreads_concentrated_codes(self):
        logits = tn.parameter(np.tile([2.0, 0.0, 0.0, 0.0], (5, 1)))
        before = tmae.code_usage_loss(tn.softmax(logits, axis=-1))
        before.backward()
        moved = logits.data - 0.5 * logits.grad
        after = tmae.code_usage_loss(tn.softmax(tn.Tensor(moved), axis=-1))
        assert after.item() < before.item()
        assert np.all(moved[:, 0] < 2.0)

    def test_gradients(self):
        rng = np.random.default_rng(5)
        res = check_gradients(
            lambda x: tmae.code_usage_loss(tn.softmax(x, axis=-1)),
            [rng.normal(size=(6, 5))])
        assert res["ok"], res["errors"]


class TestObjectiveGradient:
    def test_tokenizer_encoder_regressor(self, small_cfg, tiny_processed):
        cfg = dataclasses.replace(small_cfg, dropout=0.0)
        with tn.default_dtype(np.float64):
            params = tmae.init_tmae_params(cfg, np.random.default_rng(3))
        names = ("codebook.bias", "mask_token", "encoder.0.attn.wq",
                 "regressor.0.ff1.weight")
        sample = tiny_processed[0]

        def objective(*values):
            p = {**params, **dict(zip(names, values))}
            out = tmae.sample_loss(sample, p, cfg, np.random.default_rng(0),
                                   training=False)
            return (out.L_align * cfg.alpha + out.L_pred * cfg.beta
                    + tmae.code_usage_loss(out.probs) * cfg.usage_weight)

        res = check_gradients(objective, [params[n].data for n in names],
                              delta=1e-6)
        assert res["ok"], res["errors"]


class TestRunPretraining:
    def test_codebook_stays_in_use(self, tiny_processed, small_cfg):
        small_cfg.pretrain_epochs = 6
        res = tmae.run_pretraining(tiny_processed, small_cfg, seed=0,
                                   print_msg=False)
        tokens = np.concatenate([tmae.assign_tokens(s, res.params, small_cfg)
                                 for s in tiny_processed])
        assert np.unique(tokens).size > 1
        assert metrics.code_perplexity(tokens, small_cfg.vocab) >= 2.0
        assert all(0 <= r["L_usage"] <= math.log(small_cfg.vocab) + 1e-4
                   for r in res.log)
        assert all(r["pplx"] >= 1.0 for r in res.log)

    def test_same_seed_same_log(self, tiny_processed, small_cfg):
        cfg = small_cfg
        cfg.pretrain_epochs = 1
        a = tmae.run_pretraining(tiny_processed, cfg, seed=3,
                                 print_msg=False)
        b = tmae.run_pretraining(tiny_processed, cfg, seed=3,
                                 print_msg=False)
        assert a.steps == 2
        assert a.log == b.log
        for name in a.params:
            np.testing.assert_array_equal(a.params[name].data,
                                          b.params[name].data)

    def test_log_lines(self, tiny_processed, small_cfg):
        small_cfg.pretrain_epochs = 1
        res = tmae.run_pretraining(tiny_processed, small_cfg, seed=0,
                                   print_msg=False)
        lines = tmae.log_lines(res.log, ["window = 4"])
        assert lines[0] == "# window = 4"
        assert lines[1] == "epoch,step,L_align,L_pred,total,hits1,ndcg10"
        assert len(lines) == 2 + res.steps
        assert all(r["total"] >= 0 for r in res.log)
        assert len(tmae.epoch_means(res.log)) == 1

    def test_divergence_names_step(self, tiny_processed, small_cfg,
                                   monkeypatch):
        def nan_loss(sample, params, cfg, rng, training=True):
            return tmae.SampleOutput(
                tn.Tensor(float("nan")), tn.Tensor(0.0),
                np.zeros((1, cfg.vocab)), np.zeros(1, dtype=np.int64),
                tn.Tensor(np.full((1, cfg.vocab), 1.0 / cfg.vocab)),
                np.zeros(1, dtype=np.int64))

        monkeypatch.setattr(tmae, "sample_loss", nan_loss)
        with pytest.raises(DivergenceError, match="step 1") as err:
            tmae.run_pretraining(tiny_processed, small_cfg, seed=0,
                                 print_msg=False)
        assert err.value.step == 1

    def test_no_usable_samples(self, tiny_processed):
        for s in tiny_processed:
            s.window_valid = np.array([True])
        with pytest.raises(DataError):
            tmae.pretraining_samples(tiny_processed)
