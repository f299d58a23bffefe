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
"""Read touch gesture recordings, preprocess them, and build sample pairs.

The input is a CSV file with the header
::
    user_id,sample_id,t,x,y,p,a

one row per touch event: time in milliseconds, screen coordinates,
pressure and contact area. The rows of one gesture share
`user_id` and `sample_id`.

Preprocessing is always applied in the same order:
first-order differences of `t`, `x`, `y`; z-score of `p` and `a`
within the sample; zero padding to a multiple of the window size.
"""
import concurrent.futures as fts
import json
import math
import os
from dataclasses import dataclass, field

import numpy as np
import regex

import touchtools.funcs as funcs
from touchtools.errors import DataError
from touchtools.errors import FormatError
from touchtools.errors import ParameterError
from touchtools.errors import ValidationError

COLUMNS = ("user_id", "sample_id", "t", "x", "y", "p", "a")
N_FEATURES = 5
STD_EPS = 1e-8

# Column names of other exports, mapped to the unified columns.
# Only the names are translated; segmenting a raw export into gestures
# (one `sample_id` per stroke) must be done beforehand.
COLUMN_ADAPTERS = {
    "default": {c: c for c in COLUMNS},
    "touchalytics": {"user ID": "user_id",
                     "stroke ID": "sample_id",
                     "time[ms]": "t",
                     "x-coordinate": "x",
                     "y-coordinate": "y",
                     "pressure": "p",
                     "area covered": "a"},
    "bioident": {"userid": "user_id",
                 "strokeid": "sample_id",
                 "timestamp": "t",
                 "x": "x",
                 "y": "y",
                 "pressure": "p",
                 "fingerarea": "a"},
}


def column_key(name):
    """Header name without quotes or spaces, case folded."""
    return regex.sub(r"[\s\"']+", "", name).casefold()


@dataclass
class GestureSample:
    """One touch trajectory; `rows` has the columns t, x, y, p, a."""
    user_id: str
    sample_id: str
    rows: np.ndarray

    @property
    def length(self):
        return int(self.rows.shape[0])

    @property
    def key(self):
        return f"{self.user_id}/{self.sample_id}"


@dataclass
class ProcessedSample:
    """Preprocessed and padded features with the validity of each window."""
    features: np.ndarray
    length: int
    pad_len: int
    window: int
    window_valid: np.ndarray
    user_id: str = ""
    sample_id: str = ""

    @property
    def n_windows(self):
        return self.pad_len // self.window

    @property
    def key(self):
        return f"{self.user_id}/{self.sample_id}"


@dataclass
class PairBatch:
    """List of `(sample_a, sample_b, y)` with `y=1` for the same user."""
    pairs: list = field(default_factory=list)

    def __len__(self):
        return len(self.pairs)

    def __iter__(self):
        return iter(self.pairs)

    def __getitem__(self, item):
        return self.pairs[item]

    def labels(self):
        return np.array([y for _, _, y in self.pairs], dtype=np.int64)


def validate_sample(sample):
    """Check the invariants of a gesture sample.

    Raises `ValidationError` naming the sample if there are fewer than
    two rows, missing channels, non-finite values, or decreasing
    timestamps.
    """
    rows = np.asarray(sample.rows)
    if rows.ndim != 2 or rows.shape[1] != N_FEATURES:
        raise ValidationError(f"sample '{sample.key}' must have "
                              f"{N_FEATURES} channels, got shape {rows.shape}")
    if rows.shape[0] < 2:
        raise ValidationError(f"sample '{sample.key}' has {rows.shape[0]} "
                              "rows; at least 2 are needed")
    if not np.all(np.isfinite(rows)):
        raise ValidationError(f"sample '{sample.key}' has non-finite values")
    steps = np.diff(rows[:, 0])
    if np.any(steps < 0):
        bad = int(np.argmax(steps < 0)) + 2
        raise ValidationError(f"sample '{sample.key}': timestamp decreases "
                              f"at row {bad} of the sample")
    return sample


def load_gesture_csv(file=None, adapter="default", sep=",",
                     print_msg=True):
    """Parse a CSV file of touch events into gesture samples.

    Parameters
    ----------
    file: str
        Path to the CSV file. The first line is the header.
        Blank lines and lines starting with `#` are skipped.
    adapter: str or dict, optional
        It defaults to `'default'`, which expects the columns
        `user_id,sample_id,t,x,y,p,a`.
        Another key of `COLUMN_ADAPTERS`, or a dictionary mapping
        the file's column names to those names, translates other exports.
    sep: str, optional
        It defaults to `,`. The separator between fields.
    print_msg: bool, optional
        It defaults to `True`, in which case it prints a short summary.

    Returns
    -------
    list of GestureSample
        One sample per `(user_id, sample_id)`, in order of first
        appearance, with rows in file order.

    Raises
    ------
    FormatError
        If the file doesn't exist, a column is missing,
        or a value cannot be parsed.
    ValidationError
        If timestamps decrease within a sample; the message names it.
    """
    if not file or not isinstance(file, str) or not os.path.exists(file):
        raise FormatError(f"gesture file does not exist: {file}")

    if isinstance(adapter, str):
        if adapter not in COLUMN_ADAPTERS:
            raise FormatError(f"unknown column adapter '{adapter}'; "
                              f"choose from {sorted(COLUMN_ADAPTERS)}")
        adapter = COLUMN_ADAPTERS[adapter]

    with open(file, "r", encoding="utf-8") as fd:
        lines = fd.readlines()

    content = [(n, line.strip()) for n, line in enumerate(lines, start=1)
               if line.strip() and not line.strip().startswith("#")]
    if not content:
        raise FormatError(f"empty gesture file: {file}")

    names = {column_key(k): v for k, v in adapter.items()}
    header = [names.get(column_key(h), h.strip())
              for h in content[0][1].split(sep)]
    missing = [c for c in COLUMNS if c not in header]
    if missing:
        raise FormatError(f"missing columns {missing} in '{file}'; "
                          f"header is {content[0][1]}")
    pos = [header.index(c) for c in COLUMNS]

    groups = {}
    for n, line in content[1:]:
        parts = [p.strip() for p in line.split(sep)]
        if len(parts) < len(header):
            raise FormatError(f"line {n}: expected {len(header)} fields, "
                              f"got {len(parts)}")
        key = (parts[pos[0]], parts[pos[1]])
        try:
            values = [float(parts[i]) for i in pos[2:]]
        except ValueError:
            raise FormatError(f"line {n}: cannot parse numbers in "
                              f"'{line}'") from None
        groups.setdefault(key, []).append(values)

    samples = []
    for (user_id, sample_id), rows in groups.items():
        sample = GestureSample(user_id, sample_id,
                               np.array(rows, dtype=np.float64))
        samples.append(validate_sample(sample))

    if print_msg:
        n_users = len({s.user_id for s in samples})
        print(80 * "-")
        print(f"Parsed '{file}'")
        print(f"Samples: {len(samples)}, users: {n_users}, "
              f"rows: {len(content) - 1}")

    return samples


def write_gesture_csv(samples, file):
    """Write samples in the CSV format read by `load_gesture_csv`."""
    lines = [",".join(COLUMNS)]
    for s in samples:
        for row in np.asarray(s.rows):
            values = ",".join(f"{v:.6f}" for v in row)
            lines.append(f"{s.user_id},{s.sample_id},{values}")
    return funcs.write_lines(lines, file)


def first_order_difference(sample):
    """Return the differences `(T', X', Y')` of time and position.

    The first row is zero; with a single row the result is one zero row.
    """
    rows = np.asarray(getattr(sample, "rows", sample), dtype=np.float64)
    out = np.zeros((rows.shape[0], 3))
    out[1:] = np.diff(rows[:, :3], axis=0)
    return out


def zscore_normalize(values):
    """Standardize with the mean and population deviation of `values`.

    A deviation below `1e-8` gives zeros.
    """
    v = np.asarray(values, dtype=np.float64)
    sigma = v.std()
    if sigma < STD_EPS:
        return np.zeros_like(v)
    return (v - v.mean()) / sigma


def preprocess_features(sample):
    """Return the `[T, 5]` features `(T', X', Y', P', A')` of a sample.

    Only pressure and area are standardized; the differences are used raw.
    Statistics come from the real rows of this sample alone.
    """
    rows = np.asarray(sample.rows, dtype=np.float64)
    out = np.zeros((rows.shape[0], N_FEATURES))
    out[:, :3] = first_order_difference(rows)
    out[:, 3] = zscore_normalize(rows[:, 3])
    out[:, 4] = zscore_normalize(rows[:, 4])
    return out


def pad_and_window_mask(features, window):
    """Zero pad to a multiple of `window` and flag the valid windows.

    A window is invalid when more than half of its positions are padding.
    Only the last window can contain padding; if it is the only window
    and it is mostly padding it is still kept valid, because it holds
    every real row of the sample.
    """
    if int(window) != window or window < 1:
        raise ParameterError(f"window must be a positive integer, "
                             f"window={window}")
    window = int(window)
    x = np.asarray(features)
    length = x.shape[0]
    pad_len = max(1, math.ceil(length / window)) * window
    padded = np.zeros((pad_len,) + x.shape[1:], dtype=np.float32)
    padded[:length] = x

    n_windows = pad_len // window
    starts = np.arange(n_windows) * window
    pad_count = np.clip(starts + window - length, 0, window)
    valid = pad_count * 2 <= window
    if not valid.any():
        valid[0] = True

    return ProcessedSample(features=padded, length=length, pad_len=pad_len,
                           window=window, window_valid=valid)


def preprocess_sample(sample, window):
    """Full preprocessing pipeline of one `GestureSample`."""
    out = pad_and_window_mask(preprocess_features(sample), window)
    out.user_id = sample.user_id
    out.sample_id = sample.sample_id
    return out


def preprocess_samples(samples, window, threads=4):
    """Preprocess many samples, in parallel when `threads > 0`."""
    if threads:
        with fts.ThreadPoolExecutor(max_workers=threads) as executor:
            results = executor.map(preprocess_sample,
                                   samples, (window for _ in samples))
            return list(results)

    return [preprocess_sample(s, window) for s in samples]


def group_by_user(samples):
    users = {}
    for s in samples:
        users.setdefault(s.user_id, []).append(s)
    return users


def make_pairs(samples, rng_seed=0, n_pairs=0):
    """Build labeled pairs of samples.

    Half of the pairs are positive (same user) and half negative
    (different users); with an odd `n_pairs` there is one more positive.
    Positives are spread over the users in turn and a sample
    is never paired with itself. Pairs are not repeated while
    unused combinations remain.

    Parameters
    ----------
    samples: list of GestureSample or ProcessedSample
        At least two users, each with at least two samples.
    rng_seed: int, optional
        It defaults to 0. The same seed gives the same pairs.
    n_pairs: int, optional
        It defaults to 0, which gives an empty batch.

    Returns
    -------
    PairBatch
        The pairs, shuffled.

    Raises
    ------
    DataError
        If there are fewer than two users with two samples each.
    """
    if n_pairs < 0:
        raise DataError(f"n_pairs must not be negative, n_pairs={n_pairs}")

    users = group_by_user(samples)
    eligible = sorted(u for u, ss in users.items() if len(ss) >= 2)
    if len(users) < 2 or len(eligible) < len(users):
        counts = {u: len(ss) for u, ss in users.items()}
        raise DataError("pairs need at least 2 users with at least "
                        f"2 samples each; samples per user: {counts}")

    if n_pairs == 0:
        return PairBatch([])

    rng = funcs.make_rng(rng_seed, 3)
    names = sorted(users)
    n_pos = (n_pairs + 1) // 2
    n_neg = n_pairs - n_pos

    pairs = []
    used = set()

    order = list(rng.permutation(eligible))
    capacity = {u: len(users[u]) * (len(users[u]) - 1) // 2 for u in order}
    taken = {u: 0 for u in order}
    turn = 0
    while len(pairs) < n_pos:
        if all(taken[u] >= capacity[u] for u in order):
            used.clear()
            taken = {u: 0 for u in order}
        u = order[turn % len(order)]
        turn += 1
        if taken[u] >= capacity[u]:
            continue
        ss = users[u]
        while True:
            i, j = rng.choice(len(ss), size=2, replace=False)
            key = (u, min(i, j), max(i, j))
            if key not in used:
                break
        used.add(key)
        taken[u] += 1
        pairs.append((ss[i], ss[j], 1))

    n_total_neg = sum(len(users[a]) * len(users[b])
                      for ia, a in enumerate(names) for b in names[ia + 1:])
    neg_used = set()
    while len(pairs) < n_pos + n_neg:
        if len(neg_used) >= n_total_neg:
            neg_used.clear()
        ua, ub = rng.choice(len(names), size=2, replace=False)
        ia = int(rng.integers(len(users[names[ua]])))
        ib = int(rng.integers(len(users[names[ub]])))
        key = tuple(sorted([(ua, ia), (ub, ib)]))
        if key in neg_used:
            continue
        neg_used.add(key)
        pairs.append((users[names[ua]][ia], users[names[ub]][ib], 0))

    perm = rng.permutation(len(pairs))
    return PairBatch([pairs[k] for k in perm])


def split_samples(samples, ratio=0.8, seed=0, min_side=1):
    """Split the samples of every user into two disjoint sets.

    Users appear in both sets; each sample is in exactly one.
    About `ratio` of the samples of every user go to the first set,
    and each set keeps at least `min_side` samples of the user when
    the user has `2 * min_side` of them, otherwise at least one.

    Returns
    -------
    tuple of list
        `(train, test)`.
    """
    if not 0 < ratio < 1:
        raise DataError(f"split ratio must be in (0, 1), ratio={ratio}")
    if min_side < 1:
        raise DataError(f"min_side must be at least 1, min_side={min_side}")

    rng = funcs.make_rng(seed, 4)
    train, test = [], []
    for user, ss in sorted(group_by_user(samples).items()):
        perm = rng.permutation(len(ss))
        n_train = int(round(ratio * len(ss)))
        keep = min_side if len(ss) >= 2 * min_side else 1
        if len(ss) >= 2:
            n_train = min(max(n_train, keep), len(ss) - keep)
        train += [ss[k] for k in perm[:n_train]]
        test += [ss[k] for k in perm[n_train:]]

    return train, test


def write_pair_manifest(batch, file):
    """Write pairs as JSON lines, `{"a": "<user>/<sample>", "b": ..., "y": 1}`."""
    lines = [json.dumps({"a": a.key, "b": b.key, "y": int(y)})
             for a, b, y in batch]
    return funcs.write_lines(lines, file) if lines else \
        funcs.atomic_write(file, "")


def read_pair_manifest(file, samples):
    """Read a JSON lines pair manifest, resolving keys against `samples`.

    Raises `DataError` for unknown samples, and `FormatError`
    for lines that are not valid manifest entries.
    """
    if not file or not os.path.exists(file):
        raise FormatError(f"pair manifest does not exist: {file}")

    index = {s.key: s for s in samples}
    pairs = []
    with open(file, "r", encoding="utf-8") as fd:
        for n, line in enumerate(fd, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                entry = json.loads(line)
                a, b, y = entry["a"], entry["b"], int(entry["y"])
            except (ValueError, KeyError, TypeError):
                raise FormatError(f"{file}, line {n}: not a pair entry") \
                    from None
            if y not in (0, 1):
                raise FormatError(f"{file}, line {n}: label must be 0 or 1")
            for k in (a, b):
                if k not in index:
                    raise DataError(f"{file}, line {n}: unknown sample '{k}'")
            pairs.append((index[a], index[b], y))

    return PairBatch(pairs)
