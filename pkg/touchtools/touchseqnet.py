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
"""Siamese pair classifier for touch gestures.

Both samples of a pair go through the same branch
::
    window projection -> positional encoding -> encoder
        -> TACN -> channel attention -> mean over valid windows

and the head scores the concatenated embeddings `[z_a, z_b]`.
The projection and the encoder are taken from a pretrained
checkpoint; everything is trained with
`lambda1 * contrastive + lambda2 * binary cross-entropy`.

Ablation variants
::
    full             everything above
    no-attention     TACN without the attention fusion
    pretrained-only  no TACN and no channel attention
    no-pretrain      projection and encoder randomly initialized

`sweep` picks the window and kernel sizes by held-out accuracy.
"""
import concurrent.futures as fts
import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

import touchtools.config as config
import touchtools.dataio as dataio
import touchtools.funcs as funcs
import touchtools.layers as layers
import touchtools.metrics as metrics
import touchtools.optim as optim
import touchtools.tensor as tn
import touchtools.tokenizer as tk
from touchtools.errors import CheckpointError
from touchtools.errors import ConfigError
from touchtools.errors import DivergenceError
from touchtools.errors import ParameterError
from touchtools.fingerca import init_fingerca
from touchtools.fingerca import recalibrate
from touchtools.tacn import KERNEL_CHOICES
from touchtools.tacn import TacnConfig
from touchtools.tacn import init_tacn
from touchtools.tacn import tacn_forward
from touchtools.tmae import ENCODER
from touchtools.tmae import positional_encoding
from touchtools.tmae import run_pretraining
from touchtools.tokenizer import WINDOW_CHOICES

LOG_COLUMNS = ("epoch", "split", "accuracy", "f1", "auc", "loss")
BCE_EPS = 1e-7
DIST_EPS = 1e-12

ABLATIONS = {
    "full": {"pretrained": True, "tacn": True, "attention": True},
    "no-attention": {"pretrained": True, "tacn": True, "attention": False},
    "pretrained-only": {"pretrained": True, "tacn": False,
                        "attention": False},
    "no-pretrain": {"pretrained": False, "tacn": True, "attention": True},
}
ABLATION_NAMES = tuple(ABLATIONS)
TRANSFERRED = ("proj", ENCODER)


@dataclass
class Model:
    """Parameters of one branch and of the head, with the run settings."""
    params: dict
    cfg: object
    variant: str = "full"

    @property
    def flags(self):
        return ABLATIONS[self.variant]

    @property
    def embed_size(self):
        if self.flags["tacn"]:
            return self.cfg.tcn_channels[-1]
        return self.cfg.embed_dim

    def tacn_config(self):
        return TacnConfig.from_config(self.cfg,
                                      attention=self.flags["attention"])

    def frozen(self):
        return Model(layers.freeze(self.params), self.cfg, self.variant)


@dataclass
class TrainResult:
    model: Model
    log: list = field(default_factory=list)
    best_epoch: int = 0
    best_accuracy: float = -1.0


def check_variant(variant):
    if variant not in ABLATIONS:
        raise ConfigError(f"unknown ablation '{variant}'; "
                          f"choose from {list(ABLATION_NAMES)}")
    return variant


def init_branch(cfg, rng, channels=5):
    """Randomly initialized projection and encoder."""
    params = {}
    layers.init_linear(params, "proj", cfg.window * channels,
                       cfg.embed_dim, rng)
    layers.init_encoder(params, ENCODER, cfg.enc_layers, cfg.embed_dim,
                        cfg.ff_dim, rng)
    return params


def build_from_pretrained(checkpoint, cfg, variant="full", seed=None,
                          channels=5):
    """Assemble a classifier from pretrained tensors.

    Parameters
    ----------
    checkpoint: dict or None
        Tensors or arrays by name, as returned by
        `checkpoint.load_checkpoint`. Only `proj.*` and `encoder.*`
        are used. It is ignored for the `no-pretrain` variant
        and may be `None` then.
    cfg: RunConfig
        Sizes of the model.
    variant: str, optional
        It defaults to `'full'`. A key of `ABLATIONS`.
    seed: int, optional
        It defaults to `None`, in which case `funcs.resolve_seed` is used.
        Seeds the initialization of the new parts.
    channels: int, optional
        It defaults to 5. Number of input features.

    Returns
    -------
    Model
        All parameters are trainable.

    Raises
    ------
    CheckpointError
        If a transferred tensor is missing or has another shape;
        the message names the tensor.
    """
    check_variant(variant)
    seed = funcs.resolve_seed(seed)
    rng = funcs.make_rng(seed, 30)
    flags = ABLATIONS[variant]

    params = init_branch(cfg, rng, channels)
    if flags["pretrained"]:
        if checkpoint is None:
            raise CheckpointError(f"variant '{variant}' needs a pretrained "
                                  "checkpoint")
        for name, p in params.items():
            if name not in checkpoint:
                raise CheckpointError(f"checkpoint has no tensor '{name}'")
            value = checkpoint[name]
            value = value.data if isinstance(value, tn.Tensor) else value
            value = np.asarray(value)
            if value.shape != p.shape:
                raise CheckpointError(f"checkpoint tensor '{name}' has shape "
                                      f"{value.shape}, expected {p.shape}")
            params[name] = tn.parameter(value.copy())

    model = Model(params, cfg, variant)
    if flags["tacn"]:
        init_tacn(params, model.tacn_config(), rng)
        init_fingerca(params, cfg.tcn_channels[-1], rng,
                      reduction=cfg.reduction)
    layers.init_linear(params, "head.fc1", 2 * model.embed_size,
                       cfg.head_hidden, rng)
    layers.init_linear(params, "head.fc2", cfg.head_hidden, 1, rng)
    return model


def embed(sample, model, rng=None, training=False):
    """Embedding of one preprocessed sample.

    Only the valid windows are encoded; the result is the mean
    over them of the branch output.
    """
    cfg = model.cfg
    params = model.params
    wcfg = tk.WindowConfig.from_config(cfg, sample.features.shape[1])
    Z = tk.window_project(tn.Tensor(sample.features), wcfg, params).Z
    Z = Z + positional_encoding(Z.shape[0], cfg.embed_dim)

    valid = np.nonzero(np.asarray(sample.window_valid, dtype=bool))[0]
    if valid.size < Z.shape[0]:
        Z = tn.take(Z, valid)

    H = layers.transformer_encoder(Z, params, ENCODER, cfg.heads,
                                   dropout=cfg.dropout, rng=rng,
                                   training=training)
    if model.flags["tacn"]:
        H = tacn_forward(H, params, model.tacn_config(), rng=rng,
                         training=training)
        H = recalibrate(H, params)
    return tn.mean(H, axis=0)


def pair_logit(z_1, z_2, params, prefix="head"):
    """Probability that the two embeddings come from the same user."""
    z = tn.concat([z_1, z_2], axis=0)
    z = z.reshape(1, z.shape[0])
    h = tn.relu(layers.linear(z, params, f"{prefix}.fc1"))
    return tn.sigmoid(layers.linear(h, params, f"{prefix}.fc2")).reshape()


def contrastive_loss(z_1, z_2, y, margin=1.0):
    """Squared distance for same-user pairs, squared hinge otherwise.

    `y * d**2 + (1 - y) * max(0, margin - d)**2` with `d` the
    Euclidean distance of the embeddings.
    """
    if margin <= 0:
        raise ParameterError(f"margin must be positive, margin={margin}")
    sq = tn.tsum(tn.square(tn.as_tensor(z_1) - z_2))
    if int(y) == 1:
        return sq
    dist = tn.sqrt(sq + DIST_EPS)
    return tn.square(tn.relu(margin - dist))


def ce_loss(y_hat, y):
    """Binary cross-entropy, the probability clamped to `[1e-7, 1-1e-7]`."""
    p = tn.clip(tn.as_tensor(y_hat), BCE_EPS, 1 - BCE_EPS)
    y = float(y)
    return -(tn.log(p) * y + tn.log(1 - p) * (1 - y))


def total_loss(L_con, L_ce, lambda1=0.5, lambda2=1.0):
    if lambda1 < 0 or lambda2 < 0 or lambda1 == lambda2 == 0:
        raise ParameterError(f"loss weights must be non negative and not "
                             f"both zero, lambda1={lambda1}, "
                             f"lambda2={lambda2}")
    return tn.as_tensor(L_con) * lambda1 + tn.as_tensor(L_ce) * lambda2


def pair_loss(z_a, z_b, y, params, cfg):
    """Score and hybrid loss of one pair of embeddings."""
    y_hat = pair_logit(z_a, z_b, params)
    loss = total_loss(contrastive_loss(z_a, z_b, y, cfg.margin),
                      ce_loss(y_hat, y), cfg.lambda1, cfg.lambda2)
    return y_hat, loss


def embed_all(samples, model, threads=4):
    """Embeddings of distinct samples, by key, with frozen parameters."""
    frozen = model.frozen()
    unique = list({s.key: s for s in samples}.values())

    if threads:
        with fts.ThreadPoolExecutor(max_workers=threads) as executor:
            results = list(executor.map(lambda s: embed(s, frozen), unique))
    else:
        results = [embed(s, frozen) for s in unique]

    return {s.key: z for s, z in zip(unique, results)}, frozen


def pair_scores(model, pairs, threads=4):
    """Scores, labels and mean loss of pairs, in manifest order."""
    samples = [s for a, b, _ in pairs for s in (a, b)]
    embeddings, frozen = embed_all(samples, model, threads=threads)

    scores, labels, losses = [], [], []
    for a, b, y in pairs:
        y_hat, loss = pair_loss(embeddings[a.key], embeddings[b.key], y,
                                frozen.params, model.cfg)
        scores.append(y_hat.item())
        labels.append(int(y))
        losses.append(loss.item())

    return np.array(scores), np.array(labels), float(np.mean(losses))


def evaluate(model, pairs, threads=4, return_loss=False):
    """Accuracy, F1 and AUC of the model on pairs.

    Pairs are scored in their given order, with a frozen copy of the
    parameters; the samples are embedded in parallel when `threads > 0`.
    A score of at least 0.5 counts as a same-user prediction.

    Returns
    -------
    EvalRecord
        With `return_loss=True`, a tuple `(record, mean_loss)`.
    """
    if len(pairs) < 1:
        raise ParameterError("evaluate needs at least one pair")
    scores, labels, loss = pair_scores(model, pairs, threads=threads)
    record = metrics.evaluate_scores(scores, labels)
    if return_loss:
        return record, loss
    return record


def train_step(model, batch, state, rng, swap_prob=0.5):
    """One optimizer step over a batch of pairs.

    Each distinct sample of the batch is embedded once, so a sample
    used by several pairs gets the sum of their gradients.
    """
    params = model.params
    cache = {}
    losses, scores, labels = [], [], []
    for a, b, y in batch:
        if rng.random() < swap_prob:
            a, b = b, a
        for s in (a, b):
            if s.key not in cache:
                cache[s.key] = embed(s, model, rng=rng, training=True)
        y_hat, loss = pair_loss(cache[a.key], cache[b.key], y, params,
                                model.cfg)
        losses.append(loss)
        scores.append(y_hat.item())
        labels.append(int(y))

    total = tn.mean(tn.stack(losses))
    value = total.item()
    if not np.isfinite(value):
        return value, scores, labels

    optim.zero_grad(params)
    total.backward()
    optim.adam_step(params, optim.collect_grads(params), state)
    return value, scores, labels


def _log_row(epoch, split, record, loss):
    return {"epoch": epoch, "split": split, "accuracy": record.accuracy,
            "f1": record.f1, "auc": record.auc, "loss": loss}


def train(model, pairs, val_pairs, cfg=None, seed=None, epochs=None,
          threads=None, print_msg=True):
    """Fine-tune the classifier on labeled pairs.

    Parameters
    ----------
    model: Model
        As returned by `build_from_pretrained`; it is not modified.
    pairs: PairBatch
        Training pairs; they are shuffled every epoch and fed in
        batches of `cfg.batch`, each pair swapped with probability
        `cfg.swap_prob`.
    val_pairs: PairBatch
        Held-out pairs, evaluated after every epoch.
    cfg: RunConfig, optional
        It defaults to `None`, in which case `model.cfg` is used.
    seed: int, optional
        It defaults to `None`, in which case `funcs.resolve_seed` is used.
    epochs: int, optional
        It defaults to `None`, in which case `cfg.finetune_epochs` is used.
    threads: int, optional
        It defaults to `None`, in which case `cfg.threads` is used
        for evaluation.
    print_msg: bool, optional
        It defaults to `True`.

    Returns
    -------
    TrainResult
        The model of the epoch with the best held-out accuracy
        (the earliest one on ties) and the metric log,
        one `train` and one `val` row per epoch.

    Raises
    ------
    DivergenceError
        If the loss of a step is not finite.
    """
    cfg = cfg or model.cfg
    if len(pairs) < 1:
        raise ParameterError("training needs at least one pair")
    seed = funcs.resolve_seed(seed)
    epochs = cfg.finetune_epochs if epochs is None else epochs
    threads = cfg.threads if threads is None else threads

    work = Model({k: tn.parameter(p.data.copy()) for k, p in
                  model.params.items()}, cfg, model.variant)
    state = optim.AdamState(lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2,
                            eps=cfg.adam_eps)
    order_rng = funcs.make_rng(seed, 31)
    noise_rng = funcs.make_rng(seed, 32)

    n = len(pairs)
    n_batches = math.ceil(n / cfg.batch)
    result = TrainResult(model=work.frozen())

    if print_msg:
        print(80 * "-")
        print(f"Fine-tuning '{model.variant}': {n} pairs, "
              f"{len(val_pairs)} held-out pairs, {epochs} epochs, "
              f"{layers.n_parameters(work.params)} parameters")

    start = time.time()
    step = 0
    for epoch in range(1, epochs + 1):
        perm = order_rng.permutation(n)
        losses, scores, labels = [], [], []
        for b in range(n_batches):
            batch = [pairs[k] for k in perm[b * cfg.batch:
                                            (b + 1) * cfg.batch]]
            step += 1
            value, s, y = train_step(work, batch, state, noise_rng,
                                     swap_prob=cfg.swap_prob)
            if not np.isfinite(value):
                raise DivergenceError(f"fine-tuning loss is {value} at step "
                                      f"{step} (epoch {epoch}, batch "
                                      f"{b + 1}/{n_batches})", step=step)
            losses.append(value)
            scores += s
            labels += y

        train_rec = metrics.evaluate_scores(scores, labels, partial=True)
        result.log.append(_log_row(epoch, "train", train_rec,
                                   float(np.mean(losses))))

        val_rec, val_loss = evaluate(work, val_pairs, threads=threads,
                                     return_loss=True)
        result.log.append(_log_row(epoch, "val", val_rec, val_loss))

        if val_rec.accuracy > result.best_accuracy:
            result.best_accuracy = val_rec.accuracy
            result.best_epoch = epoch
            result.model = work.frozen()

        if print_msg:
            print(f"Epoch {epoch:>3}/{epochs}, "
                  f"loss={np.mean(losses):.4f}, "
                  f"train_acc={train_rec.accuracy:.3f}, "
                  f"val_acc={val_rec.accuracy:.3f}, "
                  f"val_auc={val_rec.auc:.3f}")

    if print_msg:
        print(f"Best epoch: {result.best_epoch}, "
              f"accuracy={result.best_accuracy:.4f}, "
              f"{time.time() - start:.1f} s")

    return result


def pairable(samples, name="", print_msg=True):
    """Keep the samples of users that have at least two of them."""
    users = dataio.group_by_user(samples)
    left_out = [f"{u}: {len(ss)} sample" for u, ss in sorted(users.items())
                if len(ss) < 2]
    if left_out and print_msg:
        funcs.print_content([f"Users left out of the {name} pairs, "
                             "fewer than 2 samples:"] + left_out)
    return [s for s in samples if len(users[s.user_id]) >= 2]


def split_pairs(samples, cfg, seed=None, print_msg=True):
    """Split samples per user and build training and held-out pairs.

    Every user keeps two samples on each side of the split when it has
    four; users with fewer than two samples on a side are left out
    of the pairs of that side.
    The held-out set gets about `n_pairs * (1 - ratio) / ratio` pairs,
    so both sets have the proportions of the sample split.

    Returns
    -------
    tuple of PairBatch
        `(train_pairs, val_pairs)`; no sample appears in both.

    Raises
    ------
    DataError
        If a side has fewer than two users left.
    """
    seed = funcs.resolve_seed(seed)
    train_s, test_s = dataio.split_samples(samples, ratio=cfg.split_ratio,
                                           seed=seed, min_side=2)
    n_val = max(2, int(round(cfg.n_pairs * (1 - cfg.split_ratio)
                             / cfg.split_ratio)))
    train_pairs = dataio.make_pairs(pairable(train_s, "training", print_msg),
                                    rng_seed=seed, n_pairs=cfg.n_pairs)
    val_pairs = dataio.make_pairs(pairable(test_s, "held-out", print_msg),
                                  rng_seed=seed + 1, n_pairs=n_val)
    return train_pairs, val_pairs


def ablation_study(samples, cfg, pretrained=None, seeds=(0, 1, 2),
                   variants=ABLATION_NAMES, print_msg=True):
    """Train every variant on the same pairs and compare them.

    Parameters
    ----------
    samples: list of ProcessedSample
    cfg: RunConfig
    pretrained: dict, optional
        It defaults to `None`. Pretrained tensors; needed by all
        variants except `no-pretrain`, which are skipped without it.
    seeds: tuple of int, optional
        It defaults to `(0, 1, 2)`. One split and one training
        per seed and variant.
    variants: tuple of str, optional
        It defaults to all the variants.
    print_msg: bool, optional
        It defaults to `True`, in which case a table is printed.

    Returns
    -------
    dict
        Mean held-out accuracy of each variant.
    """
    scores = {v: [] for v in variants
              if not (pretrained is None and ABLATIONS[v]["pretrained"])}

    for seed in seeds:
        train_pairs, val_pairs = split_pairs(samples, cfg, seed=seed,
                                             print_msg=print_msg)
        for variant in scores:
            model = build_from_pretrained(pretrained, cfg, variant=variant,
                                          seed=seed)
            res = train(model, train_pairs, val_pairs, cfg=cfg, seed=seed,
                        print_msg=False)
            rec = evaluate(res.model, val_pairs, threads=cfg.threads)
            scores[variant].append(rec.accuracy)

    means = {v: float(np.mean(acc)) for v, acc in scores.items()}

    if print_msg:
        out = [80 * "-", f"Ablation over seeds {list(seeds)}"]
        for num, (variant, acc) in enumerate(means.items(), start=1):
            out.append(f"{num}/{len(means)}, {variant:<16} "
                       f"accuracy={acc:.4f}")
        funcs.print_content(out)

    return means


@dataclass
class SweepResult:
    """Held-out accuracy of every `(window, kernel)` pair of a sweep."""
    accuracy: dict = field(default_factory=dict)
    variant: str = "full"

    @property
    def best(self):
        # The first pair of the grid wins ties
        return max(self.accuracy, key=self.accuracy.get)


def _sweep_point(samples, cfg, pretrained, seed, variant):
    model = build_from_pretrained(pretrained, cfg, variant=variant,
                                  seed=seed,
                                  channels=samples[0].features.shape[1])
    train_pairs, val_pairs = split_pairs(samples, cfg, seed=seed,
                                         print_msg=False)
    res = train(model, train_pairs, val_pairs, cfg=cfg, seed=seed,
                threads=0, print_msg=False)
    return res.best_accuracy


def sweep(samples, cfg, windows=WINDOW_CHOICES, kernels=KERNEL_CHOICES,
          seed=None, pretrain=True, threads=None, print_msg=True,
          file=None, fdate=False):
    """Choose the window and kernel sizes by held-out accuracy.

    For every window size the samples are preprocessed again and,
    with `pretrain=True`, pretraining is run once; then the classifier
    is trained for every kernel size on the same split of the samples.

    Parameters
    ----------
    samples: list of GestureSample
        Raw samples, as read by `dataio.load_gesture_csv`.
    cfg: RunConfig
        Settings of every run; `window` and `kernel` are replaced.
    windows: tuple of int, optional
        It defaults to `(4, 8, 12)`.
    kernels: tuple of int, optional
        It defaults to `(4, 5, 7)`.
    seed: int, optional
        It defaults to `None`, in which case `funcs.resolve_seed` is used.
    pretrain: bool, optional
        It defaults to `True`, in which case the `full` variant is
        trained; otherwise the `no-pretrain` variant.
    threads: int, optional
        It defaults to `None`, in which case `cfg.threads` is used.
        The kernel sizes of one window are trained in parallel;
        with 0 they are trained one after the other.
    print_msg: bool, optional
        It defaults to `True`, in which case a table is printed.
    file: str, optional
        It defaults to `None`. If given, the table is written
        to this file instead of the terminal.
    fdate: bool, optional
        It defaults to `False`. If it is `True` the date is prepended
        to the name of `file`.

    Returns
    -------
    SweepResult
        Accuracy of every pair, in grid order, and the best pair.

    Raises
    ------
    ConfigError
        If a size is not one of the usual choices and
        `cfg.allow_override` is not set.
    """
    if not windows or not kernels:
        raise ConfigError("the sweep needs at least one window "
                          "and one kernel size")
    seed = funcs.resolve_seed(seed)
    threads = cfg.threads if threads is None else threads
    result = SweepResult(variant="full" if pretrain else "no-pretrain")

    for window in windows:
        wcfg = config.validate_config(replace(cfg, window=window))
        data = dataio.preprocess_samples(samples, window, threads=threads)
        pretrained = None
        if pretrain:
            pretrained = run_pretraining(data, wcfg, seed=seed,
                                         print_msg=False).params

        cfgs = [config.validate_config(replace(wcfg, kernel=k))
                for k in kernels]
        if threads:
            with fts.ThreadPoolExecutor(max_workers=threads) as executor:
                accs = list(executor.map(
                    lambda c: _sweep_point(data, c, pretrained, seed,
                                           result.variant), cfgs))
        else:
            accs = [_sweep_point(data, c, pretrained, seed, result.variant)
                    for c in cfgs]

        for kernel, acc in zip(kernels, accs):
            result.accuracy[(window, kernel)] = acc

    if print_msg:
        n = len(result.accuracy)
        out = [80 * "-", f"Sweep of '{result.variant}', seed {seed}"]
        for num, ((w, k), acc) in enumerate(result.accuracy.items(),
                                            start=1):
            out.append(f"{num}/{n}, window={w:<3} kernel={k:<3} "
                       f"accuracy={acc:.4f}")
        w, k = result.best
        out.append(f"Best: window={w}, kernel={k}, "
                   f"accuracy={result.accuracy[(w, k)]:.4f}")
        funcs.print_content(out, file=file, fdate=fdate)

    return result
