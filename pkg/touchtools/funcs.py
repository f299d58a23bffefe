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
"""Auxiliary functions for other methods of the touchtools package."""
import os
import tempfile
import time

import numpy as np

TFMTf = "%Y%m%d_%H%M"
SEED_ENV = "TSQN_SEED"


def resolve_seed(seed=None):
    """Return the seed to use for a run.

    Parameters
    ----------
    seed: int, optional
        It defaults to `None`.
        If it is given it is returned unchanged.
        Otherwise the environmental variable `TSQN_SEED` is used,
        and if that is not set either, the seed is 0.

    Returns
    -------
    int
        The seed.
    """
    if seed is not None:
        return int(seed)

    env = os.environ.get(SEED_ENV, "").strip()
    if env:
        try:
            return int(env)
        except ValueError:
            print(f">>> Ignoring invalid {SEED_ENV}={env}")

    return 0


def make_rng(seed, *stream):
    """Create a `numpy` generator for `seed` and an optional stream key.

    Independent streams (initialization, dropout, masking, pairing)
    are derived from the same seed so that they don't interfere
    with each other, and each one is reproducible.
    """
    return np.random.default_rng([int(seed)] + [int(s) for s in stream])


def atomic_write(file, data, mode="w"):
    """Write `data` to `file` through a temporary file and a rename.

    An interrupted write leaves no partial file behind;
    either the old file or the complete new one exists.
    """
    dirn = os.path.dirname(os.path.abspath(file))
    os.makedirs(dirn, exist_ok=True)

    fd, tmp = tempfile.mkstemp(prefix=".tmp_", dir=dirn)
    try:
        with os.fdopen(fd, mode) as f:
            f.write(data)
        os.replace(tmp, file)
    except BaseException:
        if os.path.exists(tmp):
            os.remove(tmp)
        raise

    return file


def write_lines(lines, file):
    """Write a list of lines to `file` atomically."""
    return atomic_write(file, "\n".join(lines) + "\n")


def print_content(output_list, file=None, fdate=False):
    """Print contents to the terminal or to a file."""
    if file:
        dirn = os.path.dirname(file)
        base = os.path.basename(file)

        if fdate:
            fdate = time.strftime(TFMTf, time.gmtime()) + "_"
        else:
            fdate = ""

        file = os.path.join(dirn, fdate + base)

    content = "\n".join(output_list)

    if file:
        try:
            write_lines(output_list, file)
            print(f"Summary written: {file}")
        except (FileNotFoundError, PermissionError) as err:
            print(f"Cannot open file for writing; {err}")
            print(content)
    else:
        print(content)

    return content


def csv_header(config_lines, columns):
    """Return the header of a CSV log: commented config lines and columns."""
    out = ["# " + line for line in config_lines]
    out.append(",".join(columns))
    return out


def fmt_row(values):
    """Format a row of a CSV log; floats use a fixed precision."""
    out = []
    for v in values:
        if isinstance(v, (float, np.floating)):
            out.append(f"{float(v):.6f}")
        else:
            out.append(str(v))
    return ",".join(out)
