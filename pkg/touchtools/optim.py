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
"""Adam optimizer over named parameter collections."""
from dataclasses import dataclass, field

import numpy as np

from touchtools.errors import ParameterError


@dataclass
class AdamState:
    """Moment buffers and hyperparameters of the Adam optimizer."""
    lr: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params, grads, state):
    """Apply one Adam update with bias correction.

    Parameters
    ----------
    params: dict of Tensor
        The trainable tensors, by name. Their `data` is replaced
        by a new array, so graphs recorded before the step keep
        the values they were built with.
    grads: dict of numpy.ndarray
        The gradients, by name. Parameters without an entry,
        or with a `None` entry, are treated as having a zero gradient.
    state: AdamState
        The optimizer state; its `step` counter is increased by one
        and the moment buffers are created on first use.

    Returns
    -------
    dict of Tensor
        The same `params` dictionary, updated.
    """
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t

    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)
        g = np.asarray(g, dtype=np.float64)
        if g.shape != p.shape:
            raise ParameterError(f"adam_step: gradient of '{name}' has shape "
                                 f"{g.shape}, parameter has {p.shape}")

        if name not in state.m:
            state.m[name] = np.zeros(p.shape, dtype=np.float64)
            state.v[name] = np.zeros(p.shape, dtype=np.float64)
        elif state.m[name].shape != p.shape:
            raise ParameterError(f"adam_step: moment buffers of '{name}' "
                                 f"have shape {state.m[name].shape}")

        state.m[name] = state.beta1 * state.m[name] + (1 - state.beta1) * g
        state.v[name] = state.beta2 * state.v[name] + (1 - state.beta2) * g * g
        m_hat = state.m[name] / c1
        v_hat = state.v[name] / c2
        update = state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
        p.data = (p.data - update).astype(p.data.dtype)

    return params


def collect_grads(params):
    """Return the `grad` arrays of `params`, by name."""
    return {name: p.grad for name, p in params.items()}


def zero_grad(params):
    for p in params.values():
        p.grad = None
