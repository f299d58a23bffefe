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
"""Classification and ranking metrics.

Pair classification is scored with accuracy, F1 and the area under
the ROC curve; codeword prediction with Hits@k and NDCG@10
of the rank of the true token.
"""
from dataclasses import dataclass

import numpy as np

from touchtools.errors import MetricError

THRESHOLD = 0.5


@dataclass
class EvalRecord:
    accuracy: float
    f1: float
    auc: float
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def n(self):
        return self.tp + self.fp + self.tn + self.fn

    def as_row(self):
        return [self.accuracy, self.f1, self.auc]


def _binary(values, name):
    v = np.asarray(values).reshape(-1)
    if v.size and not np.all((v == 0) | (v == 1)):
        raise MetricError(f"{name} must contain only 0 and 1")
    return v.astype(np.int64)


def _check_lengths(a, b):
    if len(a) != len(b):
        raise MetricError(f"length mismatch: {len(a)} predictions, "
                          f"{len(b)} labels")
    if len(a) < 1:
        raise MetricError("metrics need at least one prediction")


def confusion_counts(preds, labels):
    """Return `(tp, fp, tn, fn)` for binary predictions."""
    p = _binary(preds, "predictions")
    y = _binary(labels, "labels")
    _check_lengths(p, y)
    tp = int(np.sum((p == 1) & (y == 1)))
    fp = int(np.sum((p == 1) & (y == 0)))
    tn = int(np.sum((p == 0) & (y == 0)))
    fn = int(np.sum((p == 0) & (y == 1)))
    return tp, fp, tn, fn


def accuracy(preds, labels):
    tp, fp, tn, fn = confusion_counts(preds, labels)
    return (tp + tn) / (tp + fp + tn + fn)


def f1(preds, labels):
    """Harmonic mean of precision and recall; 0 when both are 0."""
    tp, fp, tn, fn = confusion_counts(preds, labels)
    if tp == 0:
        return 0.0
    precision = tp / (tp + fp)
    recall = tp / (tp + fn)
    return 2 * precision * recall / (precision + recall)


def _split_scores(scores, labels):
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    y = _binary(labels, "labels")
    _check_lengths(s, y)
    pos, neg = s[y == 1], s[y == 0]
    if pos.size == 0 or neg.size == 0:
        raise MetricError(f"AUC needs both classes; got {pos.size} "
                          f"positives and {neg.size} negatives")
    return pos, neg


def auc(scores, labels, chunk=2048):
    """Probability that a positive scores above a negative.

    Every (positive, negative) pair is compared; ties count one half.
    The counts are integers, so the result is exact.

    Raises `MetricError` if only one class is present.
    """
    pos, neg = _split_scores(scores, labels)
    greater = 0
    equal = 0
    for start in range(0, pos.size, chunk):
        block = pos[start:start + chunk, None]
        greater += int(np.sum(block > neg[None, :]))
        equal += int(np.sum(block == neg[None, :]))
    return (2 * greater + equal) / (2 * pos.size * neg.size)


def roc_curve(scores, labels):
    """Points of the ROC curve, from the highest threshold down.

    Returns
    -------
    tuple of numpy.ndarray
        `(fpr, tpr, thresholds)`; the first point is `(0, 0)`
        with an infinite threshold.
    """
    pos, neg = _split_scores(scores, labels)
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    y = _binary(labels, "labels")
    order = np.argsort(-s, kind="stable")
    s, y = s[order], y[order]

    last = np.r_[np.nonzero(np.diff(s))[0], s.size - 1]
    tps = np.cumsum(y)[last]
    fps = (last + 1) - tps
    tpr = np.r_[0, tps / pos.size]
    fpr = np.r_[0, fps / neg.size]
    thresholds = np.r_[np.inf, s[last]]
    return fpr, tpr, thresholds


def auc_trapezoid(scores, labels):
    """Area under the ROC curve by the trapezoidal rule."""
    fpr, tpr, _ = roc_curve(scores, labels)
    return float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2))


def token_ranks(logits, targets):
    """Rank (from 1) of the target in every row of `logits`.

    Entries with equal scores are ranked by index,
    like the choice of the predicted token.
    """
    scores = np.asarray(logits)
    t = np.asarray(targets, dtype=np.int64).reshape(-1)
    if scores.ndim != 2 or scores.shape[0] != t.size:
        raise MetricError(f"token_ranks: {t.size} targets for scores "
                          f"of shape {scores.shape}")
    rows = np.arange(t.size)
    target = scores[rows, t][:, None]
    cols = np.arange(scores.shape[1])[None, :]
    above = (scores > target) | ((scores == target) & (cols < t[:, None]))
    return 1 + above.sum(axis=1)


def hits_at_k(ranks, k=1):
    if k < 1:
        raise MetricError(f"hits_at_k: k must be at least 1, k={k}")
    r = np.asarray(ranks)
    if r.size == 0:
        return 0.0
    return float(np.mean(r <= k))


def ndcg_at_10(ranks, cutoff=10):
    """Mean of `1 / log2(rank + 1)`, with 0 for ranks past the cutoff.

    There is a single relevant item per row, so the ideal gain is 1.
    """
    r = np.asarray(ranks, dtype=np.float64)
    if r.size == 0:
        return 0.0
    gain = np.where(r <= cutoff, 1.0 / np.log2(r + 1), 0.0)
    return float(gain.mean())


def code_perplexity(tokens, vocab=None):
    """Perplexity `exp(H)` of the histogram of codeword ids.

    It is 1 when a single codeword is used and reaches the vocabulary
    size when all codewords are used equally often; 0 for no tokens.
    """
    t = np.asarray(tokens, dtype=np.int64).ravel()
    if t.size == 0:
        return 0.0
    counts = np.bincount(t, minlength=vocab or 0)
    p = counts[counts > 0] / t.size
    return float(np.exp(-np.sum(p * np.log(p))))


def evaluate_scores(scores, labels, threshold=THRESHOLD, partial=False):
    """Accuracy, F1 and AUC of pair scores.

    A pair is predicted positive when its score is at least `threshold`.

    Parameters
    ----------
    scores: array_like
        Scores in `[0, 1]`.
    labels: array_like
        Labels, 0 or 1.
    threshold: float, optional
        It defaults to `0.5`.
    partial: bool, optional
        It defaults to `False`.
        If it is `True` and only one class is present the AUC is NaN;
        otherwise that case raises `MetricError`.

    Returns
    -------
    EvalRecord
    """
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    preds = (s >= threshold).astype(np.int64)
    tp, fp, tn, fn = confusion_counts(preds, labels)
    if partial and (tp + fn == 0 or fp + tn == 0):
        area = float("nan")
    else:
        area = auc(s, labels)
    return EvalRecord(accuracy=accuracy(preds, labels),
                      f1=f1(preds, labels),
                      auc=area,
                      tp=tp, fp=fp, tn=tn, fn=fn)
