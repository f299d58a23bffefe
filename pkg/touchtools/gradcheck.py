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
"""Central finite-difference check of reverse-mode gradients."""
import numpy as np

import touchtools.tensor as tn


def numerical_gradient(fn, inputs, index, delta=1e-3):
    """Estimate the gradient of `fn(*inputs)` with respect to one input."""
    x = inputs[index]
    grad = np.zeros(x.shape, dtype=np.float64)
    flat = x.data.reshape(-1)

    for j in range(flat.size):
        orig = flat[j]
        flat[j] = orig + delta
        f_plus = fn(*inputs).item()
        flat[j] = orig - delta
        f_minus = fn(*inputs).item()
        flat[j] = orig
        grad.reshape(-1)[j] = (f_plus - f_minus) / (2.0 * delta)

    return grad


def check_gradients(fn, arrays, delta=1e-3, rtol=1e-3, atol=1e-6,
                    print_msg=False):
    """Compare reverse-mode gradients of `fn` with finite differences.

    The graph is evaluated in 64-bit floats so that the difference
    quotient measures the backward rules and not rounding.

    Parameters
    ----------
    fn: callable
        Function of tensors returning a scalar tensor.
        It must be deterministic (no fresh random numbers per call).
    arrays: list of array_like
        Values of the inputs; every input is checked.
    delta: float, optional
        It defaults to `1e-3`. The perturbation.
    rtol: float, optional
        It defaults to `1e-3`. Allowed relative error.
    atol: float, optional
        It defaults to `1e-6`. Allowed absolute error,
        for gradients that are essentially zero.
    print_msg: bool, optional
        It defaults to `False`.
        If it is `True` it prints the worst error of each input.

    Returns
    -------
    dict
        - 'ok': `True` if every gradient entry is within tolerance.
        - 'max_rel_error': the worst relative error found.
        - 'errors': list with the worst relative error per input.
    """
    with tn.default_dtype(np.float64):
        inputs = [tn.Tensor(a, requires_grad=True) for a in arrays]
        fn(*inputs).backward()
        analytic = [np.zeros(t.shape) if t.grad is None else t.grad
                    for t in inputs]

        ok = True
        errors = []
        for i, t in enumerate(inputs):
            num = numerical_gradient(fn, inputs, i, delta=delta)
            diff = np.abs(analytic[i] - num)
            scale = np.maximum(np.abs(analytic[i]), np.abs(num))
            if not np.all(diff <= atol + rtol * scale):
                ok = False
            rel = diff / np.maximum(scale, atol)
            worst = float(rel.max()) if rel.size else 0.0
            errors.append(worst)
            if print_msg:
                print(f"Input {i + 1}/{len(inputs)}, shape {t.shape}, "
                      f"max relative error {worst:.2e}")

    return {"ok": ok,
            "max_rel_error": max(errors) if errors else 0.0,
            "errors": errors}
