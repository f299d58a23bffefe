#!/usr/bin/env python3
# --------------------------------------------------------------------------- #
# The MIT License (MIT)                                                       #
#                                                                             #
# Copyright (c) 2024 The touchtools contributors                              #
#                                                                             #
# Permission is hereby granted, free of charge, to any person obtaining       #
# a copy of this software and associated documentation files                  #
# (the "Software"), to deal in the Software without restriction, including    #
# without limitation the rights to use, copy, modify, merge, publish,         #
# distribute, sublicense, and/or sell copies of the Software, and to permit   #
# persons to whom the Software is furnished to do so, subject to the          #
# following conditions:                                                       #
#                                                                             #
# The above copyright notice and this permission notice shall be included     #
# in all copies or substantial portions of the Software.                      #
#                                                                             #
# THE SOFTWARE IS PROVIDED "AS IS", WITHOUT WARRANTY OF ANY KIND, EXPRESS OR  #
# IMPLIED, INCLUDING BUT NOT LIMITED TO THE WARRANTIES OF MERCHANTABILITY,    #
# FITNESS FOR A PARTICULAR PURPOSE AND NONINFRINGEMENT. IN NO EVENT SHALL     #
# THE AUTHORS OR COPYRIGHT HOLDERS BE LIABLE FOR ANY CLAIM, DAMAGES OR OTHER  #
# LIABILITY, WHETHER IN AN ACTION OF CONTRACT, TORT OR OTHERWISE, ARISING     #
# FROM, OUT OF OR IN CONNECTION WITH THE SOFTWARE OR THE USE OR OTHER         #
# DEALINGS IN THE SOFTWARE.                                                   #
# --------------------------------------------------------------------------- #
"""Window projection of touch sequences and their discrete tokens.

A padded sequence `[T_pad, C]` is cut into `d = T_pad / window`
non-overlapping windows. Each window is projected to one embedding
of width `embed_dim`, which is a convolution with kernel length and stride
equal to the window. The embeddings are scored against a codebook
of `vocab` entries; the best entry of each window is its token.

The codebook projection is shared with the prediction head
of the masked autoencoder.
"""
from dataclasses import dataclass

import numpy as np

import touchtools.layers as layers
import touchtools.tensor as tn
from touchtools.errors import ContractError
from touchtools.errors import DimensionError
from touchtools.errors import ParameterError

WINDOW_CHOICES = (4, 8, 12)


@dataclass
class WindowConfig:
    window: int = 8
    embed_dim: int = 64
    channels: int = 5
    vocab: int = 192

    @classmethod
    def from_config(cls, cfg, channels=5):
        return cls(window=cfg.window, embed_dim=cfg.embed_dim,
                   channels=channels, vocab=cfg.vocab)


@dataclass
class EmbeddedSequence:
    """Window embeddings `Z` of shape `[d, embed_dim]` and window flags."""
    Z: tn.Tensor
    window_valid: np.ndarray = None

    @property
    def n_windows(self):
        return self.Z.shape[0]


@dataclass
class Codebook:
    """Projection of embeddings to codebook scores, `E @ weight + bias`."""
    weight: tn.Tensor
    bias: tn.Tensor

    @property
    def vocab(self):
        return self.weight.shape[1]

    @classmethod
    def from_params(cls, params, prefix="codebook"):
        return cls(params[f"{prefix}.weight"], params[f"{prefix}.bias"])


def init_tokenizer(params, cfg, rng):
    """Add the window projection `proj` and the `codebook` to `params`."""
    layers.init_linear(params, "proj", cfg.window * cfg.channels,
                       cfg.embed_dim, rng)
    layers.init_linear(params, "codebook", cfg.embed_dim, cfg.vocab, rng)
    return params


def window_project(x, cfg, params, window_valid=None, prefix="proj"):
    """Project every window of `x` to one embedding.

    Parameters
    ----------
    x: Tensor
        Padded sequence of shape `[T_pad, C]`.
    cfg: WindowConfig
        Gives the window length.
    params: dict of Tensor
        Holds `'<prefix>.weight'` of shape `[window * C, embed_dim]`
        and `'<prefix>.bias'`.
    window_valid: array of bool, optional
        It defaults to `None`. The flags are carried in the result.

    Returns
    -------
    EmbeddedSequence
        `Z` has shape `[T_pad / window, embed_dim]`.

    Raises
    ------
    ContractError
        If `T_pad` is not a multiple of the window.
    """
    x = tn.as_tensor(x)
    if x.ndim != 2:
        raise DimensionError(f"window_project: input must be [T, C], "
                             f"got {x.shape}")
    t_pad, channels = x.shape
    if t_pad < cfg.window or t_pad % cfg.window:
        raise ContractError(f"window_project: length {t_pad} is not a "
                            f"multiple of the window {cfg.window}; "
                            "pad the sequence first")

    d = t_pad // cfg.window
    flat = x.reshape(d, cfg.window * channels)
    Z = layers.linear(flat, params, prefix)
    if window_valid is not None:
        window_valid = np.asarray(window_valid, dtype=bool)
    return EmbeddedSequence(Z, window_valid)


def token_logits(Z, cb, normalize=True):
    """Scores of every window against the codebook.

    With `normalize=True` the rows are softmax probabilities;
    otherwise the raw scores `Z @ W + b` are returned.
    """
    if isinstance(Z, EmbeddedSequence):
        Z = Z.Z
    Z = tn.as_tensor(Z)
    if Z.shape[-1] != cb.weight.shape[0]:
        raise DimensionError(f"token_logits: embeddings {Z.shape} don't "
                             f"match codebook {cb.weight.shape}")
    scores = tn.matmul(Z, cb.weight) + cb.bias
    if normalize:
        return tn.softmax(scores, axis=-1)
    return scores


def sample_gumbel(shape, rng, eps=1e-20):
    u = rng.uniform(0.0, 1.0, size=shape)
    return -np.log(-np.log(u + eps) + eps)


def gumbel_softmax_sample(logits, tau=1.0, rng=None, hard=False,
                          noise=True):
    """Draw a relaxed one-hot sample for every row of `logits`.

    Parameters
    ----------
    logits: Tensor
        Shape `[d, K]`.
    tau: float, optional
        It defaults to 1.0. Temperature; it must be positive.
    rng: numpy.random.Generator, optional
        It defaults to `None`. Needed when `noise=True`.
    hard: bool, optional
        It defaults to `False`.
        If it is `True` the returned values are one-hot at the largest
        perturbed score, and the gradient is that of the soft sample.
    noise: bool, optional
        It defaults to `True`.
        If it is `False` no Gumbel noise is added, so the soft sample
        is `softmax(logits / tau)`.

    Returns
    -------
    Tensor
        Shape `[d, K]`.
    """
    if tau <= 0:
        raise ParameterError(f"gumbel_softmax_sample: temperature must be "
                             f"positive, tau={tau}")
    logits = tn.as_tensor(logits)
    if noise:
        if rng is None:
            raise ParameterError("gumbel_softmax_sample: noise needs an rng")
        logits = logits + sample_gumbel(logits.shape, rng)

    soft = tn.softmax(logits * (1.0 / tau), axis=-1)
    if not hard:
        return soft

    idx = np.argmax(logits.data, axis=-1)
    one_hot = np.zeros(soft.shape, dtype=soft.data.dtype)
    np.put_along_axis(one_hot, idx[..., None], 1.0, axis=-1)
    return tn.straight_through(one_hot, soft)


def hard_tokens(logits):
    """Token of every row, the index of its largest score.

    Ties go to the lowest index.
    """
    values = logits.data if isinstance(logits, tn.Tensor) else logits
    return np.argmax(np.asarray(values), axis=-1).astype(np.int64)
