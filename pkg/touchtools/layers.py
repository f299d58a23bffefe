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
"""Layers shared by the pretraining and the pair classification models.

Parameters are kept in plain dictionaries that map dotted names
to tensors, for example
::
    {"encoder.0.attn.wq": Tensor(...),
     "encoder.0.norm1.gamma": Tensor(...),
     ...}

The same names are used in the checkpoint files.
Linear layers compute `x @ weight + bias` with `weight` of shape
`[n_in, n_out]`.
"""
import math

import numpy as np

import touchtools.tensor as tn
from touchtools.errors import ConfigError
from touchtools.errors import DimensionError

MASK_NEG = -1e9


def glorot(rng, fan_in, fan_out, shape=None):
    """Uniform Glorot initialization."""
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    shape = shape or (fan_in, fan_out)
    return rng.uniform(-limit, limit, size=shape)


def init_linear(params, prefix, n_in, n_out, rng, bias=True):
    params[f"{prefix}.weight"] = tn.parameter(glorot(rng, n_in, n_out))
    if bias:
        params[f"{prefix}.bias"] = tn.parameter(np.zeros(n_out))
    return params


def linear(x, params, prefix):
    out = tn.matmul(x, params[f"{prefix}.weight"])
    if f"{prefix}.bias" in params:
        out = out + params[f"{prefix}.bias"]
    return out


def init_layer_norm(params, prefix, dim):
    params[f"{prefix}.gamma"] = tn.parameter(np.ones(dim))
    params[f"{prefix}.beta"] = tn.parameter(np.zeros(dim))
    return params


def layer_norm(x, params, prefix, eps=1e-5):
    return tn.layer_norm(x, params[f"{prefix}.gamma"],
                         params[f"{prefix}.beta"], eps=eps)


def init_attention(params, prefix, dim, rng):
    for w in ("wq", "wk", "wv", "wo"):
        params[f"{prefix}.{w}"] = tn.parameter(glorot(rng, dim, dim))
    return params


def multi_head_attention(x_q, x_kv, params, prefix, heads,
                         key_mask=None, return_weights=False):
    """Scaled dot-product attention with `heads` heads.

    Each head projects the queries, keys and values with its slice
    of `wq`, `wk`, `wv`; the concatenated heads are projected by `wo`.

    Parameters
    ----------
    x_q: Tensor
        Queries, shape `[L_q, dim]`.
    x_kv: Tensor
        Keys and values, shape `[L_k, dim]`.
        For self-attention it is the same tensor as `x_q`.
    params: dict of Tensor
        Holds `'<prefix>.wq'`, `'.wk'`, `'.wv'`, `'.wo'`.
    prefix: str
        Name of the attention block in `params`.
    heads: int
        Number of heads; `dim` must be divisible by it.
    key_mask: array of bool, optional
        It defaults to `None`, in which case all keys are attended.
        Otherwise keys where it is `False` receive no attention.
    return_weights: bool, optional
        It defaults to `False`.
        If it is `True` the attention weights `[heads, L_q, L_k]`
        are also returned.

    Returns
    -------
    Tensor
        Output of shape `[L_q, dim]`.
    """
    lq, dim = x_q.shape
    lk = x_kv.shape[0]
    if x_kv.shape[1] != dim:
        raise DimensionError(f"attention: queries {x_q.shape} and "
                             f"keys {x_kv.shape} differ in width")
    if heads < 1 or dim % heads:
        raise ConfigError(f"attention: width {dim} is not divisible "
                          f"by heads={heads}")
    if lk < 1:
        raise DimensionError("attention: no keys to attend to")

    dh = dim // heads
    q = tn.matmul(x_q, params[f"{prefix}.wq"])
    k = tn.matmul(x_kv, params[f"{prefix}.wk"])
    v = tn.matmul(x_kv, params[f"{prefix}.wv"])
    q = q.reshape(lq, heads, dh).transpose(1, 0, 2)
    k = k.reshape(lk, heads, dh).transpose(1, 2, 0)
    v = v.reshape(lk, heads, dh).transpose(1, 0, 2)

    scores = tn.matmul(q, k) * (1.0 / math.sqrt(dh))
    if key_mask is not None:
        key_mask = np.asarray(key_mask, dtype=bool)
        scores = scores + np.where(key_mask, 0.0, MASK_NEG)[None, None, :]
    weights = tn.softmax(scores, axis=-1)

    out = tn.matmul(weights, v).transpose(1, 0, 2).reshape(lq, dim)
    out = tn.matmul(out, params[f"{prefix}.wo"])

    if return_weights:
        return out, weights.data
    return out


def init_feed_forward(params, prefix, dim, ff_dim, rng):
    init_linear(params, f"{prefix}.ff1", dim, ff_dim, rng)
    init_linear(params, f"{prefix}.ff2", ff_dim, dim, rng)
    return params


def feed_forward(x, params, prefix, dropout=0.0, rng=None, training=False):
    h = tn.relu(linear(x, params, f"{prefix}.ff1"))
    h = tn.dropout(h, dropout, rng=rng, training=training)
    return linear(h, params, f"{prefix}.ff2")


def init_encoder(params, prefix, n_layers, dim, ff_dim, rng):
    """Create the parameters of a pre-norm Transformer encoder."""
    for layer in range(n_layers):
        lp = f"{prefix}.{layer}"
        init_layer_norm(params, f"{lp}.norm1", dim)
        init_attention(params, f"{lp}.attn", dim, rng)
        init_layer_norm(params, f"{lp}.norm2", dim)
        init_feed_forward(params, lp, dim, ff_dim, rng)
    init_layer_norm(params, f"{prefix}.norm", dim)
    return params


def encoder_layer(x, params, prefix, heads, dropout=0.2, rng=None,
                  training=True, key_mask=None):
    """One pre-norm block: attention and feed-forward, each residual."""
    h = layer_norm(x, params, f"{prefix}.norm1")
    h = multi_head_attention(h, h, params, f"{prefix}.attn", heads,
                             key_mask=key_mask)
    x = x + tn.dropout(h, dropout, rng=rng, training=training)

    h = layer_norm(x, params, f"{prefix}.norm2")
    h = feed_forward(h, params, prefix, dropout=dropout, rng=rng,
                     training=training)
    return x + tn.dropout(h, dropout, rng=rng, training=training)


def transformer_encoder(x, params, prefix, heads, dropout=0.2, rng=None,
                        training=True, key_mask=None):
    """Apply every layer found under `prefix`, then the final norm."""
    for layer in range(count_layers(params, prefix)):
        x = encoder_layer(x, params, f"{prefix}.{layer}", heads,
                          dropout=dropout, rng=rng, training=training,
                          key_mask=key_mask)
    return layer_norm(x, params, f"{prefix}.norm")


def init_cross_attention(params, prefix, n_layers, dim, ff_dim, rng):
    """Create a stack whose queries attend to a fixed context."""
    for layer in range(n_layers):
        lp = f"{prefix}.{layer}"
        init_layer_norm(params, f"{lp}.norm_q", dim)
        init_layer_norm(params, f"{lp}.norm_kv", dim)
        init_attention(params, f"{lp}.attn", dim, rng)
        init_layer_norm(params, f"{lp}.norm2", dim)
        init_feed_forward(params, lp, dim, ff_dim, rng)
    init_layer_norm(params, f"{prefix}.norm", dim)
    return params


def cross_attention_stack(queries, context, params, prefix, heads,
                          dropout=0.2, rng=None, training=True,
                          key_mask=None):
    """Refine `queries` by attending to `context` at every layer.

    The context is never updated; only the query stream
    goes through the residual blocks.
    """
    x = queries
    for layer in range(count_layers(params, prefix)):
        lp = f"{prefix}.{layer}"
        q = layer_norm(x, params, f"{lp}.norm_q")
        kv = layer_norm(context, params, f"{lp}.norm_kv")
        h = multi_head_attention(q, kv, params, f"{lp}.attn", heads,
                                 key_mask=key_mask)
        x = x + tn.dropout(h, dropout, rng=rng, training=training)

        h = layer_norm(x, params, f"{lp}.norm2")
        h = feed_forward(h, params, lp, dropout=dropout, rng=rng,
                         training=training)
        x = x + tn.dropout(h, dropout, rng=rng, training=training)
    return layer_norm(x, params, f"{prefix}.norm")


def count_layers(params, prefix):
    """Count the numbered layers stored under `prefix`."""
    n = 0
    while f"{prefix}.{n}.norm2.gamma" in params:
        n += 1
    return n


def select(params, prefix):
    """Return the entries of `params` whose name starts with `prefix.`."""
    return {k: v for k, v in params.items() if k.startswith(prefix + ".")}


def freeze(params):
    """Return detached copies of `params` for read-only use."""
    return {k: v.detach() for k, v in params.items()}


def n_parameters(params):
    return int(sum(p.size for p in params.values()))
