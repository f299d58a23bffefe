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
"""Temporal convolutional network with attention fusion.

Residual blocks of two dilated causal convolutions are stacked with
dilations 1, 2, 4, ...; the output at time `s` of the convolutional
stage only depends on inputs at times `<= s`. Multi-head
self-attention over the whole sequence is then added to the
convolutional features, so the fused output is no longer causal.

Sequences enter and leave as `[L, C]`; the convolutions work on
the transposed `[C, L]` layout.
"""
from dataclasses import dataclass

import numpy as np

import touchtools.layers as layers
import touchtools.tensor as tn
from touchtools.errors import DimensionError

KERNEL_CHOICES = (4, 5, 7)
WN_EPS = 1e-12


@dataclass
class TacnConfig:
    num_inputs: int = 64
    num_channels: tuple = (64, 128)
    kernel: int = 5
    dropout: float = 0.2
    heads: int = 4
    attention: bool = True

    @classmethod
    def from_config(cls, cfg, attention=True):
        return cls(num_inputs=cfg.tcn_inputs,
                   num_channels=tuple(cfg.tcn_channels),
                   kernel=cfg.kernel, dropout=cfg.dropout,
                   heads=cfg.fusion_heads, attention=attention)

    @property
    def out_channels(self):
        return self.num_channels[-1]

    def receptive_field(self):
        """Number of input steps seen by one output of the convolutions."""
        return 1 + sum(2 * (self.kernel - 1) * 2**level
                       for level in range(len(self.num_channels)))


def weight_norm(v, g):
    """Kernel `g * v / ||v||`, the norm taken per output channel.

    `v` has shape `[C_out, C_in, k]` and `g` has shape `[C_out]`.
    """
    v, g = tn.as_tensor(v), tn.as_tensor(g)
    if g.shape != v.shape[:1]:
        raise DimensionError(f"weight_norm: gain {g.shape} doesn't match "
                             f"kernel {v.shape}")
    norm = tn.sqrt(tn.tsum(tn.square(v), axis=(1, 2), keepdims=True)
                   + WN_EPS)
    return v * (g.reshape(g.shape[0], 1, 1) / norm)


def init_conv(params, prefix, c_in, c_out, k, rng):
    v = rng.normal(0, 0.01, size=(c_out, c_in, k))
    params[f"{prefix}.v"] = tn.parameter(v)
    params[f"{prefix}.g"] = tn.parameter(
        np.sqrt(np.sum(v**2, axis=(1, 2))))
    params[f"{prefix}.bias"] = tn.parameter(np.zeros(c_out))
    return params


def conv(x, params, prefix, dilation):
    kernel = weight_norm(params[f"{prefix}.v"], params[f"{prefix}.g"])
    bias = params[f"{prefix}.bias"]
    out = tn.dilated_causal_conv1d(x, kernel, dilation=dilation)
    return out + bias.reshape(bias.shape[0], 1)


def init_tacn(params, cfg, rng, prefix="tacn"):
    """Create the residual blocks and the fusion attention."""
    c_in = cfg.num_inputs
    for level, c_out in enumerate(cfg.num_channels):
        bp = f"{prefix}.{level}"
        init_conv(params, f"{bp}.conv1", c_in, c_out, cfg.kernel, rng)
        init_conv(params, f"{bp}.conv2", c_out, c_out, cfg.kernel, rng)
        if c_in != c_out:
            params[f"{bp}.downsample.weight"] = tn.parameter(
                rng.normal(0, 0.01, size=(c_out, c_in)))
            params[f"{bp}.downsample.bias"] = tn.parameter(np.zeros(c_out))
        c_in = c_out
    if cfg.attention:
        layers.init_attention(params, f"{prefix}.fusion", c_in, rng)
    return params


def residual_block(x, params, prefix, dilation, dropout=0.0, rng=None,
                   training=False):
    """Two causal convolutions and a residual connection.

    Parameters
    ----------
    x: Tensor
        Input of shape `[C_in, L]`.
    params: dict of Tensor
        Holds `'<prefix>.conv1.v'`, `'.g'`, `'.bias'`, the same for
        `conv2`, and `'<prefix>.downsample.weight'` and `'.bias'`
        when the number of channels changes.
    prefix: str
        Name of the block.
    dilation: int
        Dilation of both convolutions.
    dropout: float, optional
        It defaults to 0.0. Applied after each activation.

    Returns
    -------
    Tensor
        `relu(conv2(relu(conv1(x)))) + skip(x)`, shape `[C_out, L]`.
        There is no activation after the addition.
    """
    h = tn.relu(conv(x, params, f"{prefix}.conv1", dilation))
    h = tn.dropout(h, dropout, rng=rng, training=training)
    h = tn.relu(conv(h, params, f"{prefix}.conv2", dilation))
    h = tn.dropout(h, dropout, rng=rng, training=training)

    if f"{prefix}.downsample.weight" in params:
        bias = params[f"{prefix}.downsample.bias"]
        skip = (tn.matmul(params[f"{prefix}.downsample.weight"], x)
                + bias.reshape(bias.shape[0], 1))
    else:
        skip = x
    if skip.shape != h.shape:
        raise DimensionError(f"residual_block '{prefix}': skip {skip.shape} "
                             f"and block output {h.shape} differ")
    return h + skip


def mha_fusion(h, params, prefix, heads, key_mask=None):
    """Self-attention over time added to the features `[L, C]`."""
    return h + layers.multi_head_attention(h, h, params, prefix, heads,
                                           key_mask=key_mask)


def tacn_convolutions(x, params, cfg, rng=None, training=False,
                      prefix="tacn"):
    """The causal stage alone, `[L, num_inputs]` to `[L, C_out]`."""
    x = tn.as_tensor(x)
    if x.ndim != 2 or x.shape[1] != cfg.num_inputs:
        raise DimensionError(f"tacn: expected input [L, {cfg.num_inputs}], "
                             f"got {x.shape}")
    h = x.T
    for level in range(len(cfg.num_channels)):
        h = residual_block(h, params, f"{prefix}.{level}", 2**level,
                           dropout=cfg.dropout, rng=rng, training=training)
    return h.T


def tacn_forward(x, params, cfg, rng=None, training=False, prefix="tacn"):
    """Convolutional blocks followed by attention fusion.

    Returns a tensor `[L, C_out]`; the length is unchanged.
    With `cfg.attention=False` the fusion step is skipped.
    """
    h = tacn_convolutions(x, params, cfg, rng=rng, training=training,
                          prefix=prefix)
    if cfg.attention:
        h = mha_fusion(h, params, f"{prefix}.fusion", cfg.heads)
    return h
