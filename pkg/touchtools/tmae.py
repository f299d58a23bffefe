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
"""Self-supervised pretraining with a masked autoencoder over windows.

For every sample the windows are embedded and tokenized, a share
of the valid windows is masked, and
::
    visible windows  -> encoder             -> R_v
    masked windows   -> momentum encoder    -> R_m   (targets, no gradient)
    mask token + PE  -> cross-attention(R_v) -> R_hat_m
    R_hat_m          -> codebook head       -> codeword scores

The loss is `alpha * mse(R_m, R_hat_m) + beta * CE(scores, tokens)`,
with the tokens as fixed targets. Over every batch the optimized
objective adds `usage_weight` times the divergence of the mean codeword
distribution from uniform, which keeps the tokenizer from mapping
all windows to one codeword.
After each optimizer step the momentum encoder follows the encoder
by an exponential moving average.

Parameter names
::
    proj.*        window projection
    codebook.*    tokenizer codebook, also the prediction head
    mask_token    learnable query of masked windows
    encoder.*     encoder, transferred to the classifier
    regressor.*   cross-attention stack
    momentum.*    momentum copy of `encoder.*`
"""
import math
import time
from dataclasses import dataclass, field

import numpy as np

import touchtools.funcs as funcs
import touchtools.layers as layers
import touchtools.metrics as metrics
import touchtools.optim as optim
import touchtools.tensor as tn
import touchtools.tokenizer as tk
from touchtools.errors import ContractError
from touchtools.errors import DataError
from touchtools.errors import DimensionError
from touchtools.errors import DivergenceError
from touchtools.errors import ParameterError

LOG_COLUMNS = ("epoch", "step", "L_align", "L_pred", "total",
               "hits1", "ndcg10")
USAGE_COLUMNS = ("L_usage", "pplx")
USAGE_EPS = 1e-10
ENCODER = "encoder"
MOMENTUM = "momentum"
REGRESSOR = "regressor"


@dataclass
class MaskSplit:
    v_index: np.ndarray
    m_index: np.ndarray
    Z_v: tn.Tensor
    Z_m: tn.Tensor
    T_v: np.ndarray
    T_m: np.ndarray


@dataclass
class PretrainLoss:
    L_align: float
    L_pred: float
    alpha: float
    beta: float
    total: float
    hits1: float = 0.0
    ndcg10: float = 0.0


@dataclass
class SampleOutput:
    L_align: tn.Tensor
    L_pred: tn.Tensor
    logits: np.ndarray
    targets: np.ndarray
    probs: tn.Tensor
    tokens: np.ndarray


@dataclass
class PretrainResult:
    params: dict
    log: list = field(default_factory=list)
    steps: int = 0


def positional_encoding(d, m):
    """Fixed sinusoidal encoding of `d` positions in `m` dimensions.

    Even columns hold `sin(pos / 10000**(2i/m))`,
    odd columns the cosine of the same angle.
    """
    pos = np.arange(d, dtype=np.float64)[:, None]
    i = np.arange(0, m, 2, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, i / m)
    pe = np.zeros((d, m))
    pe[:, 0::2] = np.sin(angle)
    pe[:, 1::2] = np.cos(angle[:, :m // 2])
    return tn.Tensor(pe)


def n_masked(n_valid, ratio):
    """Number of windows to mask, rounded half up, at least 1."""
    return max(1, int(math.floor(ratio * n_valid + 0.5)))


def split_visible_masked(Z_p, tokens, window_valid, ratio, rng):
    """Choose the masked windows and split embeddings and tokens.

    The masked windows are drawn uniformly among the valid windows;
    padding windows always stay visible. At least one valid window
    stays visible.

    Parameters
    ----------
    Z_p: Tensor
        Embeddings with positional encoding, `[d, m]`.
    tokens: array of int
        Token of every window, `d` values.
    window_valid: array of bool
        Validity of every window.
    ratio: float
        Masking ratio, in `(0, 1)`.
    rng: numpy.random.Generator

    Returns
    -------
    MaskSplit

    Raises
    ------
    DataError
        If fewer than two windows are valid.
    """
    if not 0 < ratio < 1:
        raise ParameterError(f"masking ratio must be in (0, 1), "
                             f"ratio={ratio}")
    d = Z_p.shape[0]
    valid = np.asarray(window_valid, dtype=bool)
    tokens = np.asarray(tokens, dtype=np.int64)
    if valid.shape != (d,) or tokens.shape != (d,):
        raise DimensionError(f"split: {d} windows, {valid.shape} flags, "
                             f"{tokens.shape} tokens")
    candidates = np.nonzero(valid)[0]
    if candidates.size < 2:
        raise DataError(f"masking needs at least 2 valid windows, "
                        f"found {candidates.size}")

    k = min(n_masked(candidates.size, ratio), candidates.size - 1)
    m_index = np.sort(rng.choice(candidates, size=k, replace=False))
    v_index = np.setdiff1d(np.arange(d), m_index)

    return MaskSplit(v_index=v_index, m_index=m_index,
                     Z_v=tn.take(Z_p, v_index), Z_m=tn.take(Z_p, m_index),
                     T_v=tokens[v_index], T_m=tokens[m_index])


def encode_visible(Z_v, params, cfg, rng=None, training=True,
                   key_mask=None):
    """Run the encoder over the visible windows."""
    if Z_v.shape[0] < 1:
        raise ContractError("encode_visible: no visible windows")
    return layers.transformer_encoder(Z_v, params, ENCODER, cfg.heads,
                                      dropout=cfg.dropout, rng=rng,
                                      training=training, key_mask=key_mask)


def momentum_encode(Z_m, params, cfg):
    """Targets for the masked windows from the momentum encoder.

    Dropout is off and the result carries no graph.
    """
    if Z_m.shape[0] < 1:
        raise ContractError("momentum_encode: no masked windows")
    x = tn.as_tensor(Z_m).detach()
    frozen = layers.freeze(layers.select(params, MOMENTUM))
    out = layers.transformer_encoder(x, frozen, MOMENTUM, cfg.heads,
                                     dropout=0.0, training=False)
    return out.detach()


def mask_queries(params, pe, m_index):
    """Mask token plus the positional encoding of every masked window."""
    token = params["mask_token"]
    return token.reshape(1, token.shape[0]) + tn.take(pe, m_index)


def regress_masked(R_v, E_mask, params, cfg, rng=None, training=True,
                   key_mask=None):
    """Predict the representations of the masked windows from `R_v`."""
    if R_v.shape[0] < 1:
        raise ContractError("regress_masked: no visible representations")
    if E_mask.shape[-1] != R_v.shape[-1]:
        raise DimensionError(f"regress_masked: queries {E_mask.shape} and "
                             f"context {R_v.shape} differ in width")
    return layers.cross_attention_stack(E_mask, R_v, params, REGRESSOR,
                                        cfg.heads, dropout=cfg.dropout,
                                        rng=rng, training=training,
                                        key_mask=key_mask)


def predict_codewords(R_hat, params):
    """Codeword scores of the predicted representations (before softmax)."""
    return tk.token_logits(R_hat, tk.Codebook.from_params(params),
                           normalize=False)


def momentum_update(theta_m, theta_e, mu):
    """Move every momentum tensor towards its encoder counterpart.

    `theta_m[name] = mu * theta_m[name] + (1 - mu) * theta_e[name']`,
    where `name` and `name'` differ only in their first component
    (`momentum.0.attn.wq` follows `encoder.0.attn.wq`).
    The tensors of `theta_m` are updated in place.
    """
    if not 0 <= mu <= 1:
        raise ParameterError(f"momentum must be in [0, 1], mu={mu}")

    source = {name.split(".", 1)[-1]: p for name, p in theta_e.items()}
    for name, p in theta_m.items():
        key = name.split(".", 1)[-1]
        if key not in source:
            raise DimensionError(f"momentum_update: no encoder tensor "
                                 f"for '{name}'")
        e = source[key]
        if e.shape != p.shape:
            raise DimensionError(f"momentum_update: '{name}' has shape "
                                 f"{p.shape}, encoder has {e.shape}")
        p.data = (mu * p.data.astype(np.float64)
                  + (1 - mu) * e.data.astype(np.float64)).astype(p.data.dtype)

    return theta_m


def alignment_loss(R_m, R_hat):
    """Mean squared error between targets and predictions."""
    R_m, R_hat = tn.as_tensor(R_m), tn.as_tensor(R_hat)
    if R_m.shape != R_hat.shape:
        raise DimensionError(f"alignment_loss: shapes {R_m.shape} and "
                             f"{R_hat.shape} differ")
    return tn.mean(tn.square(R_hat - R_m))


def code_usage_loss(probs):
    """Divergence of the mean codeword distribution from uniform.

    `probs` holds one softmax row per window. With `q` the mean of the
    rows the loss is `sum_k q_k log(K q_k)`: 0 when the windows spread
    evenly over the `K` codewords, `log K` when they all take one.
    """
    probs = tn.as_tensor(probs)
    if probs.ndim != 2 or probs.shape[0] < 1:
        raise DimensionError(f"code_usage_loss: expected [N, K] "
                             f"probabilities, got {probs.shape}")
    vocab = probs.shape[1]
    q = tn.mean(probs, axis=0)
    return tn.tsum(q * tn.log(q * float(vocab) + USAGE_EPS))


def pretrain_loss(L_align, L_pred, alpha=1.0, beta=1.0, logits=None,
                  targets=None):
    """Weighted pretraining loss and its record.

    Parameters
    ----------
    L_align, L_pred: Tensor or float
        The alignment and prediction losses.
    alpha, beta: float, optional
        They default to 1.0. Non negative weights.
    logits: array, optional
        It defaults to `None`. Codeword scores of the masked windows;
        with `targets` they give Hits@1 and NDCG@10 in the record.
    targets: array of int, optional
        It defaults to `None`. True tokens of the masked windows.

    Returns
    -------
    tuple
        `(total, record)`, the total loss tensor and a `PretrainLoss`.
    """
    if alpha < 0 or beta < 0:
        raise ParameterError(f"loss weights must not be negative, "
                             f"alpha={alpha}, beta={beta}")
    L_align, L_pred = tn.as_tensor(L_align), tn.as_tensor(L_pred)
    total = L_align * alpha + L_pred * beta

    hits1 = ndcg10 = 0.0
    if logits is not None and targets is not None:
        ranks = metrics.token_ranks(logits, targets)
        hits1 = metrics.hits_at_k(ranks, 1)
        ndcg10 = metrics.ndcg_at_10(ranks)

    record = PretrainLoss(L_align=L_align.item(), L_pred=L_pred.item(),
                          alpha=alpha, beta=beta, total=total.item(),
                          hits1=hits1, ndcg10=ndcg10)
    return total, record


def init_tmae_params(cfg, rng, channels=5):
    """Create all pretraining parameters.

    The momentum encoder starts as a copy of the encoder
    and never requires gradients.
    """
    params = {}
    tk.init_tokenizer(params, tk.WindowConfig.from_config(cfg, channels),
                      rng)
    params["mask_token"] = tn.parameter(rng.normal(0, 0.02, cfg.embed_dim))
    layers.init_encoder(params, ENCODER, cfg.enc_layers, cfg.embed_dim,
                        cfg.ff_dim, rng)
    layers.init_cross_attention(params, REGRESSOR, cfg.regressor_layers,
                                cfg.embed_dim, cfg.ff_dim, rng)
    for name, p in list(layers.select(params, ENCODER).items()):
        key = MOMENTUM + name[len(ENCODER):]
        params[key] = tn.Tensor(p.data.copy())
    return params


def trainable(params):
    return {k: p for k, p in params.items() if p.requires_grad}


def sample_loss(sample, params, cfg, rng, training=True):
    """Forward pass of one preprocessed sample.

    Returns
    -------
    SampleOutput
        The two losses, the codeword scores and tokens of the masked
        windows, and for the valid windows the codeword probabilities
        and the sampled tokens.
    """
    wcfg = tk.WindowConfig.from_config(cfg, sample.features.shape[1])
    emb = tk.window_project(tn.Tensor(sample.features), wcfg, params,
                            window_valid=sample.window_valid)
    Z = emb.Z
    d = Z.shape[0]

    scores = tk.token_logits(Z, tk.Codebook.from_params(params),
                             normalize=False)
    one_hot = tk.gumbel_softmax_sample(scores, tau=cfg.tau, rng=rng,
                                       hard=True)
    tokens = tk.hard_tokens(one_hot)

    pe = positional_encoding(d, cfg.embed_dim)
    Z_p = Z + pe
    split = split_visible_masked(Z_p, tokens, emb.window_valid,
                                 cfg.mask_ratio, rng)
    key_mask = emb.window_valid[split.v_index]

    R_v = encode_visible(split.Z_v, params, cfg, rng=rng,
                         training=training, key_mask=key_mask)
    R_m = momentum_encode(split.Z_m, params, cfg)
    E_mask = mask_queries(params, pe, split.m_index)
    R_hat = regress_masked(R_v, E_mask, params, cfg, rng=rng,
                           training=training, key_mask=key_mask)
    logits = predict_codewords(R_hat, params)

    L_align = alignment_loss(R_m, R_hat)
    L_pred = tn.cross_entropy(logits, split.T_m)

    valid = np.flatnonzero(emb.window_valid)
    probs = tn.take(tn.softmax(scores * (1.0 / cfg.tau), axis=-1), valid)
    return SampleOutput(L_align, L_pred, logits.data, split.T_m, probs,
                        tokens[valid])


def assign_tokens(sample, params, cfg):
    """Codewords of the valid windows of a sample, without noise."""
    wcfg = tk.WindowConfig.from_config(cfg, sample.features.shape[1])
    frozen = layers.freeze({**layers.select(params, "proj"),
                            **layers.select(params, "codebook")})
    emb = tk.window_project(tn.Tensor(sample.features), wcfg, frozen)
    scores = tk.token_logits(emb.Z, tk.Codebook.from_params(frozen),
                             normalize=False)
    return tk.hard_tokens(scores)[np.asarray(sample.window_valid, bool)]


def pretraining_samples(samples):
    """Keep the samples with at least two valid windows."""
    usable = [s for s in samples if int(np.sum(s.window_valid)) >= 2]
    if not usable:
        raise DataError("no sample has the 2 valid windows that "
                        "masking needs; use longer gestures "
                        "or a smaller window")
    return usable


def run_pretraining(samples, cfg, seed=None, print_msg=True):
    """Pretrain the tokenizer, encoder and regressor.

    Parameters
    ----------
    samples: list of ProcessedSample
        Preprocessed with the window of `cfg`. Samples with fewer
        than two valid windows are skipped.
    cfg: RunConfig
        Hyperparameters; `pretrain_epochs`, `batch`, `lr`, `alpha`,
        `beta`, `momentum`, `mask_ratio`, `tau` and the sizes of the model.
    seed: int, optional
        It defaults to `None`, in which case `funcs.resolve_seed` is used.
        The same seed gives the same parameters and the same log.
    print_msg: bool, optional
        It defaults to `True`, in which case the mean losses
        of every epoch are printed.

    Returns
    -------
    PretrainResult
        The parameters and one log row per optimizer step,
        with the columns of `LOG_COLUMNS`.

    Raises
    ------
    DivergenceError
        If the loss of a step is not finite.
    """
    seed = funcs.resolve_seed(seed)
    samples = pretraining_samples(samples)
    init_rng = funcs.make_rng(seed, 20)
    order_rng = funcs.make_rng(seed, 21)
    noise_rng = funcs.make_rng(seed, 22)

    params = init_tmae_params(cfg, init_rng,
                              channels=samples[0].features.shape[1])
    train_params = trainable(params)
    state = optim.AdamState(lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2,
                            eps=cfg.adam_eps)
    momentum_params = layers.select(params, MOMENTUM)
    encoder_params = layers.select(params, ENCODER)

    n = len(samples)
    n_batches = math.ceil(n / cfg.batch)
    result = PretrainResult(params=params)

    if print_msg:
        print(80 * "-")
        print(f"Pretraining: {n} samples, {n_batches} batches per epoch, "
              f"{cfg.pretrain_epochs} epochs, "
              f"{layers.n_parameters(train_params)} trainable parameters")

    start = time.time()
    for epoch in range(1, cfg.pretrain_epochs + 1):
        perm = order_rng.permutation(n)
        epoch_rows = []

        for b in range(n_batches):
            batch = [samples[k] for k in perm[b * cfg.batch:
                                              (b + 1) * cfg.batch]]
            optim.zero_grad(train_params)

            outputs, batch_loss = [], None
            for sample in batch:
                out = sample_loss(sample, params, cfg, noise_rng)
                loss = out.L_align * cfg.alpha + out.L_pred * cfg.beta
                if not np.isfinite(loss.item()):
                    raise DivergenceError(
                        f"pretraining loss is {loss.item()} at step "
                        f"{result.steps + 1} (epoch {epoch}, "
                        f"batch {b + 1}/{n_batches}, "
                        f"sample '{sample.key}')", step=result.steps + 1)
                outputs.append(out)
                batch_loss = loss if batch_loss is None else batch_loss + loss

            L_usage = code_usage_loss(tn.concat([o.probs for o in outputs]))
            (batch_loss * (1.0 / len(batch))
             + L_usage * cfg.usage_weight).backward()

            optim.adam_step(train_params, optim.collect_grads(train_params),
                            state)
            momentum_update(momentum_params, encoder_params, cfg.momentum)
            result.steps += 1

            _, record = pretrain_loss(
                float(np.mean([o.L_align.item() for o in outputs])),
                float(np.mean([o.L_pred.item() for o in outputs])),
                cfg.alpha, cfg.beta,
                logits=np.concatenate([o.logits for o in outputs]),
                targets=np.concatenate([o.targets for o in outputs]))
            tokens = np.concatenate([o.tokens for o in outputs])
            row = {"epoch": epoch, "step": result.steps,
                   "L_align": record.L_align, "L_pred": record.L_pred,
                   "total": record.total, "hits1": record.hits1,
                   "ndcg10": record.ndcg10, "L_usage": L_usage.item(),
                   "pplx": metrics.code_perplexity(tokens, cfg.vocab)}
            epoch_rows.append(row)
            result.log.append(row)

        if print_msg:
            mean = epoch_means(epoch_rows)[0]
            print(f"Epoch {epoch:>3}/{cfg.pretrain_epochs}, "
                  f"loss={mean['total']:.4f}, "
                  f"align={mean['L_align']:.4f}, "
                  f"pred={mean['L_pred']:.4f}, "
                  f"hits1={mean['hits1']:.3f}, "
                  f"ndcg10={mean['ndcg10']:.3f}, "
                  f"usage={mean.get('L_usage', 0.0):.3f}, "
                  f"pplx={mean.get('pplx', 0.0):.1f}")

    if print_msg:
        tokens = np.concatenate([assign_tokens(s, params, cfg)
                                 for s in samples])
        print(f"Pretraining finished: {result.steps} steps, "
              f"{time.time() - start:.1f} s")
        print(f"Codewords in use: {np.unique(tokens).size}/{cfg.vocab}, "
              f"perplexity {metrics.code_perplexity(tokens, cfg.vocab):.1f}")

    return result


def epoch_means(log):
    """Average the step rows of a loss log per epoch."""
    epochs = {}
    for row in log:
        epochs.setdefault(row["epoch"], []).append(row)

    out = []
    for epoch, rows in sorted(epochs.items()):
        mean = {"epoch": epoch}
        for col in LOG_COLUMNS[2:] + USAGE_COLUMNS:
            if all(col in r for r in rows):
                mean[col] = float(np.mean([r[col] for r in rows]))
        out.append(mean)
    return out


def log_lines(log, config_lines=None):
    """CSV lines of a loss log, with the configuration as comments."""
    lines = funcs.csv_header(config_lines or [], LOG_COLUMNS)
    for row in log:
        lines.append(funcs.fmt_row([row[c] for c in LOG_COLUMNS]))
    return lines
