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
"""Synthetic multi-user touch gestures.

Each user has a profile of pressure, contact area, speed and
trajectory shape. The means of a profile are placed on a grid whose
spread is scaled by `separation`: with `separation=0` all users share
the same means and cannot be told apart; with `separation=1`
they are as far apart as the grid allows.
"""
import concurrent.futures as fts
from dataclasses import dataclass

import numpy as np

import touchtools.funcs as funcs
from touchtools.dataio import GestureSample
from touchtools.dataio import validate_sample
from touchtools.errors import ParameterError

PRESSURE_RANGE = (0.3, 0.9)
AREA_RANGE = (0.2, 0.8)
FRAME_MS = 1000 / 60
AR_COEF = 0.8
MIN_LENGTH = 8


@dataclass
class UserProfile:
    user_id: str
    pressure_mean: float
    pressure_jitter: float
    speed_scale: float
    curvature: float
    tremor_freq: float
    area_mean: float
    seed: int = 0


def grid_point(slot, n_slots, low, high):
    """Center of cell `slot` when `[low, high]` is cut into `n_slots` cells."""
    return low + (high - low) * (slot % n_slots + 0.5) / n_slots


def gen_user(rng_seed=0, separation=1.0, slot=None, n_slots=8,
             user_id=None):
    """Generate the profile of one synthetic user.

    Parameters
    ----------
    rng_seed: int, optional
        It defaults to 0. The same seed gives the same profile.
    separation: float, optional
        It defaults to 1.0. Between 0 and 1; scales how far the means
        of this user are from the common center.
    slot: int, optional
        It defaults to `None`, in which case `rng_seed % n_slots` is used.
        Position of the user on the grid of pressure and area means.
    n_slots: int, optional
        It defaults to 8. Number of grid cells; users in different cells
        differ in mean pressure by at least `0.6 / n_slots`
        times `separation`.
    user_id: str, optional
        It defaults to `None`, in which case it is `u<rng_seed>`.

    Returns
    -------
    UserProfile
    """
    if not 0 <= separation <= 1:
        raise ParameterError(f"separation must be in [0, 1], "
                             f"separation={separation}")
    if n_slots < 1:
        raise ParameterError(f"n_slots must be positive, n_slots={n_slots}")

    if slot is None:
        slot = rng_seed % n_slots
    rng = funcs.make_rng(rng_seed, 10)

    p_center = sum(PRESSURE_RANGE) / 2
    a_center = sum(AREA_RANGE) / 2
    p_grid = grid_point(slot, n_slots, *PRESSURE_RANGE)
    # Area cells are visited in another order than pressure cells
    a_slot = (slot * 3 + 1) % n_slots
    a_grid = grid_point(a_slot, n_slots, *AREA_RANGE)

    u = rng.uniform(-1, 1, size=4)
    return UserProfile(
        user_id=user_id if user_id is not None else f"u{rng_seed}",
        pressure_mean=float(p_center + separation * (p_grid - p_center)),
        pressure_jitter=0.03,
        speed_scale=float(1 + 0.4 * separation * u[0]),
        curvature=float(0.5 * separation * u[1]),
        tremor_freq=float(6 + 2 * separation * u[2]),
        area_mean=float(a_center + separation * (a_grid - a_center)),
        seed=int(rng_seed))


def ar1_noise(n, coef, scale, rng):
    """Stationary AR(1) noise with standard deviation `scale`."""
    out = np.empty(n)
    out[0] = rng.normal(0, scale)
    innov = rng.normal(0, scale * np.sqrt(1 - coef**2), size=n)
    for i in range(1, n):
        out[i] = coef * out[i - 1] + innov[i]
    return out


def gen_sample(profile, T, rng=None, sample_id="0"):
    """Generate one gesture of `T` rows for `profile`.

    The path is a low frequency sinusoid with a quadratic drift
    given by the curvature of the user, plus a small tremor.
    Pressure and area follow AR(1) noise around the means of the user.
    Timestamps increase by about one frame per row.

    Raises `ParameterError` if `T` is smaller than 8.
    """
    if T < MIN_LENGTH:
        raise ParameterError(f"gesture length must be at least "
                             f"{MIN_LENGTH}, T={T}")
    T = int(T)
    if rng is None:
        rng = funcs.make_rng(profile.seed, 11)

    dt = FRAME_MS * (1 + 0.1 * np.abs(rng.normal(size=T)))
    dt[0] = 0
    t = rng.uniform(0, 1000) + np.cumsum(dt)

    s = np.linspace(0, 1, T)
    phase = rng.uniform(0, 2 * np.pi)
    amp = 150 * profile.speed_scale
    x0, y0 = rng.uniform(100, 900, size=2)
    tremor = 2 * np.sin(2 * np.pi * profile.tremor_freq * s + phase)
    x = (x0 + amp * s + 0.3 * amp * np.sin(2 * np.pi * s + phase)
         + profile.curvature * amp * s**2 + tremor)
    y = (y0 + 0.5 * amp * np.sin(np.pi * s + phase)
         + profile.curvature * amp * s + tremor)

    p = profile.pressure_mean + ar1_noise(T, AR_COEF,
                                          profile.pressure_jitter, rng)
    a = profile.area_mean + ar1_noise(T, AR_COEF,
                                      profile.pressure_jitter, rng)

    rows = np.stack([t, x, y, np.clip(p, 0.0, 1.0),
                     np.clip(a, 0.0, None)], axis=1)
    return validate_sample(GestureSample(profile.user_id, str(sample_id),
                                         rows))


def gen_dataset(n_users=8, samples_per_user=40, T_range=(32, 96), seed=0,
                separation=1.0, threads=0, print_msg=False):
    """Generate a dataset of synthetic gestures.

    Parameters
    ----------
    n_users: int, optional
        It defaults to 8. At least 2.
    samples_per_user: int, optional
        It defaults to 40.
    T_range: tuple of int, optional
        It defaults to `(32, 96)`. Lengths are drawn uniformly
        from this closed range; the lower end must be at least 8.
    seed: int, optional
        It defaults to 0. The same seed gives bit-identical data.
    separation: float, optional
        It defaults to 1.0. See `gen_user`.
    threads: int, optional
        It defaults to 0, in which case samples are generated in sequence.
        Every sample has its own random stream, so the result
        doesn't depend on `threads`.
    print_msg: bool, optional
        It defaults to `False`.

    Returns
    -------
    list of GestureSample
        `n_users * samples_per_user` samples grouped by user.
    """
    if n_users < 2:
        raise ParameterError(f"at least 2 users are needed, "
                             f"n_users={n_users}")
    if samples_per_user < 1:
        raise ParameterError(f"samples_per_user must be positive, "
                             f"samples_per_user={samples_per_user}")
    low, high = int(T_range[0]), int(T_range[1])
    if low < MIN_LENGTH or high < low:
        raise ParameterError(f"invalid length range T_range={T_range}; "
                             f"need {MIN_LENGTH} <= low <= high")

    width = len(str(n_users - 1))
    profiles = [gen_user(rng_seed=seed * 10007 + u, separation=separation,
                         slot=u, n_slots=n_users,
                         user_id=f"user{u:0{width}d}")
                for u in range(n_users)]

    jobs = []
    for u, profile in enumerate(profiles):
        for k in range(samples_per_user):
            rng = funcs.make_rng(seed, 12, u, k)
            T = int(rng.integers(low, high + 1))
            jobs.append((profile, T, rng, str(k)))

    if threads:
        with fts.ThreadPoolExecutor(max_workers=threads) as executor:
            samples = list(executor.map(lambda j: gen_sample(*j), jobs))
    else:
        samples = [gen_sample(*j) for j in jobs]

    if print_msg:
        print(80 * "-")
        print(f"Synthetic dataset: {n_users} users, "
              f"{samples_per_user} samples per user, "
              f"lengths {low}-{high}, separation={separation}")

    return samples
