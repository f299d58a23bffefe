"""Shared fixtures: seeded generators, small configurations and datasets."""
import dataclasses

import numpy as np
import pytest

import touchtools.config as config
import touchtools.dataio as dataio
import touchtools.synthgen as synthgen


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_cfg():
    """A configuration small enough for training in a unit test."""
    return dataclasses.replace(
        config.DEFAULTS, embed_dim=16, tcn_inputs=16, tcn_channels=[8, 16],
        enc_layers=1, heads=2, regressor_layers=1, vocab=12, ff_dim=32,
        fusion_heads=2, reduction=4, head_hidden=8, window=4, kernel=4,
        batch=16, pretrain_epochs=2, finetune_epochs=2, n_pairs=40,
        dropout=0.1, threads=0)


@pytest.fixture
def tiny_samples():
    return synthgen.gen_dataset(n_users=3, samples_per_user=6,
                                T_range=(16, 24), seed=7)


@pytest.fixture
def tiny_processed(tiny_samples, small_cfg):
    return dataio.preprocess_samples(tiny_samples, small_cfg.window,
                                     threads=0)


@pytest.fixture
def csv_file(tmp_path):
    """Write lines to a file in the temporary directory; return its name."""
    def write(lines, name="gestures.csv"):
        path = tmp_path / name
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        return str(path)
    return write
