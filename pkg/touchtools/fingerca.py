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
"""Channel attention for sequence features.

The features are averaged over time into one descriptor per channel;
a two layer network maps it to a gate in `(0, 1)` for every channel,
and every time step is multiplied by the gate.
"""
import touchtools.layers as layers
import touchtools.tensor as tn
from touchtools.errors import ParameterError

REDUCTION = 4


def init_fingerca(params, channels, rng, reduction=REDUCTION,
                  prefix="fingerca"):
    if reduction < 1 or channels // reduction < 1:
        raise ParameterError(f"fingerca: reduction {reduction} is too "
                             f"large for {channels} channels")
    hidden = channels // reduction
    layers.init_linear(params, f"{prefix}.fc1", channels, hidden, rng)
    layers.init_linear(params, f"{prefix}.fc2", hidden, channels, rng)
    return params


def channel_descriptor(X):
    """Mean of every channel of `X [T, C]` over time."""
    return tn.mean(tn.as_tensor(X), axis=0)


def channel_gate(z, params, prefix="fingerca"):
    h = tn.relu(layers.linear(z, params, f"{prefix}.fc1"))
    return tn.sigmoid(layers.linear(h, params, f"{prefix}.fc2"))


def recalibrate(X, params, prefix="fingerca"):
    """Scale every channel of `X [T, C]` by its gate.

    The gate is computed from the time average, so it is the same
    for all time steps.
    """
    X = tn.as_tensor(X)
    z = channel_descriptor(X).reshape(1, X.shape[1])
    return X * channel_gate(z, params, prefix)
