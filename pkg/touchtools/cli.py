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
"""Command line application: synthetic data, pairs, pretraining,
fine-tuning, evaluation and the window and kernel sweep.
::
    touchseq.py synth --users 8 --samples 40 --seed 1 --out d.csv
    touchseq.py pairs --data d.csv --n-pairs 400 --out p.jsonl
    touchseq.py pretrain --data d.csv --out tmae.tsqn
    touchseq.py finetune --data d.csv --pretrained tmae.tsqn --out net.tsqn
    touchseq.py evaluate --model net.tsqn --data d.csv --pairs p.jsonl
    touchseq.py sweep --data d.csv --log-file sweep.txt

Every command prints its settings first. Errors are printed as
`>>> Error: ...` and give the exit codes
::
    0  ok
    2  configuration or parameter error
    3  data, file or checkpoint error
    4  numeric divergence
"""
import argparse
import dataclasses
import os

import touchtools.checkpoint as ckpt
import touchtools.config as config
import touchtools.dataio as dataio
import touchtools.funcs as funcs
import touchtools.synthgen as synthgen
import touchtools.tensor as tn
import touchtools.tmae as tmae
import touchtools.touchseqnet as tsn
from touchtools.errors import ConfigError
from touchtools.errors import DataError
from touchtools.errors import MetricError
from touchtools.errors import TouchError

# Command line flag -> configuration key
CONFIG_FLAGS = {
    "embed_dim": int, "lr": float, "batch": int, "enc_layers": int,
    "heads": int, "dropout": float, "regressor_layers": int, "window": int,
    "mask_ratio": float, "vocab": int, "kernel": int, "alpha": float,
    "beta": float, "lambda1": float, "lambda2": float, "margin": float,
    "pretrain_epochs": int, "finetune_epochs": int, "momentum": float,
    "tau": float, "usage_weight": float, "ff_dim": int, "fusion_heads": int,
    "reduction": int, "head_hidden": int, "n_pairs": int,
    "split_ratio": float, "swap_prob": float, "threads": int,
}
EVAL_COLUMNS = ("accuracy", "f1", "auc")


def print_settings(title, lines):
    funcs.print_content([80 * "-", title] + lines)


def load_processed(data, cfg, adapter="default", print_msg=True):
    samples = dataio.load_gesture_csv(data, adapter=adapter,
                                      print_msg=print_msg)
    return dataio.preprocess_samples(samples, cfg.window,
                                     threads=cfg.threads)


def default_log(out):
    root, _ = os.path.splitext(out)
    return root + ".log.csv"


def run_seed(cfg, seed=None):
    """Seed of a run: the flag, else a seed set in the configuration,
    else `TSQN_SEED`, else 0."""
    if seed is None and cfg.seed != config.DEFAULTS.seed:
        seed = cfg.seed
    return funcs.resolve_seed(seed)


def cmd_synth(users=8, samples=40, seed=None, out="synthetic.csv",
              t_min=32, t_max=96, separation=1.0, threads=0):
    """Write a synthetic dataset in the gesture CSV format.

    Returns
    -------
    str
        The name of the written file.
    """
    if users < 2:
        raise ConfigError(f"--users must be at least 2 for pairing, "
                          f"users={users}")
    seed = funcs.resolve_seed(seed)
    print_settings("Synthetic dataset",
                   [f"users: {users}", f"samples: {samples}",
                    f"lengths: {t_min}-{t_max}",
                    f"separation: {separation}", f"seed: {seed}",
                    f"out: {out}"])

    data = synthgen.gen_dataset(n_users=users, samples_per_user=samples,
                                T_range=(t_min, t_max), seed=seed,
                                separation=separation, threads=threads)
    dataio.write_gesture_csv(data, out)
    print(f"Dataset written: {out}, {len(data)} samples")
    return out


def cmd_pairs(data, out, n_pairs=2000, seed=None, split="all", ratio=0.8,
              adapter="default"):
    """Write a pair manifest for the samples of a gesture CSV.

    With `split='train'` or `'test'` only the samples of that side
    of the per-user split are paired, with the same split
    that fine-tuning uses for the same seed.
    """
    seed = funcs.resolve_seed(seed)
    print_settings("Pair manifest",
                   [f"data: {data}", f"n_pairs: {n_pairs}",
                    f"split: {split}", f"seed: {seed}", f"out: {out}"])

    samples = dataio.load_gesture_csv(data, adapter=adapter)
    if split != "all":
        train, test = dataio.split_samples(samples, ratio=ratio, seed=seed,
                                           min_side=2)
        samples = train if split == "train" else test
    pairs = dataio.make_pairs(samples, rng_seed=seed, n_pairs=n_pairs)
    dataio.write_pair_manifest(pairs, out)
    n_pos = int(pairs.labels().sum()) if len(pairs) else 0
    print(f"Pairs written: {out}, {len(pairs)} pairs, {n_pos} positive")
    return out


def cmd_pretrain(cfg, data, out, log=None, seed=None, adapter="default"):
    """Pretrain on a gesture CSV; write the checkpoint and the loss log.

    Returns
    -------
    PretrainResult
    """
    seed = run_seed(cfg, seed)
    cfg = dataclasses.replace(cfg, seed=seed)
    log = log or default_log(out)
    print_settings("Pretraining settings", config.config_lines(cfg))

    samples = load_processed(data, cfg, adapter=adapter)
    result = tmae.run_pretraining(samples, cfg, seed=seed)

    ckpt.save_checkpoint(ckpt.with_meta(result.params, cfg), out)
    funcs.write_lines(tmae.log_lines(result.log, config.log_header(cfg)),
                      log)
    print(f"Checkpoint written: {out}")
    print(f"Loss log written: {log}")
    return result


def cmd_finetune(cfg, data, pretrained=None, out="touchseqnet.tsqn",
                 ablation="full", log=None, seed=None, adapter="default"):
    """Fine-tune the pair classifier; write the best model and its log.

    The `no-pretrain` variant doesn't read `pretrained`.

    Returns
    -------
    TrainResult
    """
    tsn.check_variant(ablation)
    seed = run_seed(cfg, seed)
    cfg = dataclasses.replace(cfg, seed=seed)
    log = log or default_log(out)
    print_settings("Fine-tuning settings",
                   config.config_lines(cfg) + [f"ablation: {ablation}"])

    tensors = None
    if tsn.ABLATIONS[ablation]["pretrained"]:
        if not pretrained:
            raise ConfigError(f"--pretrained is needed for the "
                              f"'{ablation}' variant")
        tensors = ckpt.load_checkpoint(pretrained)
        ckpt.check_hparams(tensors, cfg, keys=("window", "embed_dim",
                                               "enc_layers", "heads",
                                               "ff_dim"))

    samples = load_processed(data, cfg, adapter=adapter)
    train_pairs, val_pairs = tsn.split_pairs(samples, cfg, seed=seed)
    model = tsn.build_from_pretrained(tensors, cfg, variant=ablation,
                                      seed=seed,
                                      channels=samples[0].features.shape[1])
    result = tsn.train(model, train_pairs, val_pairs, cfg=cfg, seed=seed)

    ckpt.save_checkpoint(ckpt.with_meta(result.model.params, cfg,
                                        variant=ablation), out)
    lines = funcs.csv_header(config.log_header(cfg)
                             + [f"ablation = {ablation}"], tsn.LOG_COLUMNS)
    lines += [funcs.fmt_row([row[c] for c in tsn.LOG_COLUMNS])
              for row in result.log]
    funcs.write_lines(lines, log)
    print(f"Model written: {out} (epoch {result.best_epoch})")
    print(f"Metric log written: {log}")
    return result


def load_model(file, threads=4):
    """Rebuild a fine-tuned model from its checkpoint."""
    tensors = ckpt.load_checkpoint(file)
    settings = ckpt.stored_settings(tensors)
    if "variant" not in settings:
        raise DataError(f"{file} is not a fine-tuned model checkpoint")
    variant = settings.pop("variant")
    cfg = config.make_config(overrides=dict(settings, threads=threads,
                                            allow_override=True))
    params = {k: tn.Tensor(v) for k, v in ckpt.parameters(tensors).items()}
    return tsn.Model(params, cfg, variant)


def cmd_evaluate(model, data, pairs, out=None, threads=4,
                 adapter="default", log_file=None, fdate=False):
    """Score a pair manifest with a fine-tuned model.

    Prints the accuracy, F1 and AUC as a table and, when `out` is given,
    writes them as a CSV file with the columns `accuracy,f1,auc`.
    With `log_file` the table goes to that file, its name prefixed
    with the date when `fdate` is set.

    Returns
    -------
    EvalRecord
    """
    for name, file in (("model", model), ("data", data), ("pairs", pairs)):
        if not file or not os.path.exists(file):
            raise DataError(f"{name} file does not exist: {file}")

    net = load_model(model, threads=threads)
    samples = load_processed(data, net.cfg, adapter=adapter)
    manifest = dataio.read_pair_manifest(pairs, samples)
    if len(manifest) < 1:
        raise DataError(f"no pairs in {pairs}")
    labels = manifest.labels()
    if labels.min() == labels.max():
        kind = "positive" if labels[0] else "negative"
        raise MetricError(f"{pairs} has only {kind} pairs; "
                          "AUC needs both classes")

    record = tsn.evaluate(net, manifest, threads=threads)
    table = [80 * "-",
             f"{'Dataset':<24}{'Model':<18}{'Accuracy':>10}{'F1':>10}"
             f"{'AUC':>10}",
             f"{os.path.basename(data):<24}{net.variant:<18}"
             f"{record.accuracy:>10.4f}{record.f1:>10.4f}{record.auc:>10.4f}",
             f"Pairs: {record.n}, TP={record.tp}, FP={record.fp}, "
             f"TN={record.tn}, FN={record.fn}"]
    funcs.print_content(table, file=log_file, fdate=fdate)

    if out:
        funcs.write_lines([",".join(EVAL_COLUMNS),
                           funcs.fmt_row(record.as_row())], out)
        print(f"Metrics written: {out}")
    return record


def cmd_sweep(cfg, data, windows=tsn.WINDOW_CHOICES,
              kernels=tsn.KERNEL_CHOICES, pretrain=True, seed=None,
              adapter="default", log_file=None, fdate=False):
    """Train every window and kernel size and report the best pair.

    Returns
    -------
    SweepResult
    """
    seed = run_seed(cfg, seed)
    cfg = dataclasses.replace(cfg, seed=seed)
    print_settings("Sweep settings",
                   config.config_lines(cfg)
                   + [f"windows: {list(windows)}",
                      f"kernels: {list(kernels)}",
                      f"pretrain: {pretrain}"])

    samples = dataio.load_gesture_csv(data, adapter=adapter)
    return tsn.sweep(samples, cfg, windows=windows, kernels=kernels,
                     seed=seed, pretrain=pretrain, file=log_file,
                     fdate=fdate)


def add_summary_flags(parser):
    parser.add_argument("--log-file", dest="log_file", default=None,
                        help="write the summary table to this file")
    parser.add_argument("--fdate", action="store_true",
                        help="prefix the summary file name with the date")


def add_config_flags(parser):
    parser.add_argument("--config", help="configuration file, key = value")
    for key, kind in CONFIG_FLAGS.items():
        parser.add_argument("--" + key.replace("_", "-"), dest=key,
                            type=kind, default=None)
    parser.add_argument("--tcn-channels", dest="tcn_channels", type=int,
                        nargs="+", default=None)
    parser.add_argument("--allow-override", dest="allow_override",
                        action="store_true", default=None,
                        help="accept window and kernel sizes outside "
                             "the usual choices")


def config_from_args(args):
    overrides = {k: getattr(args, k, None)
                 for k in list(CONFIG_FLAGS) + ["tcn_channels",
                                                "allow_override"]}
    if args.seed is not None:
        overrides["seed"] = args.seed
    return config.make_config(file=args.config, overrides=overrides)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="touchseq",
        description="Masked pretraining and Siamese verification "
                    "of touch gestures")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic dataset")
    p.add_argument("--users", type=int, default=8)
    p.add_argument("--samples", type=int, default=40)
    p.add_argument("--t-min", type=int, default=32)
    p.add_argument("--t-max", type=int, default=96)
    p.add_argument("--separation", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)

    p = sub.add_parser("pairs", help="write a pair manifest")
    p.add_argument("--data", required=True)
    p.add_argument("--n-pairs", type=int, default=2000)
    p.add_argument("--split", choices=("all", "train", "test"),
                   default="all")
    p.add_argument("--split-ratio", type=float, default=0.8)
    p.add_argument("--adapter", default="default",
                   choices=sorted(dataio.COLUMN_ADAPTERS))
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)

    p = sub.add_parser("pretrain", help="self-supervised pretraining")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--log", default=None)
    p.add_argument("--adapter", default="default",
                   choices=sorted(dataio.COLUMN_ADAPTERS))
    p.add_argument("--seed", type=int, default=None)
    add_config_flags(p)

    p = sub.add_parser("finetune", help="train the pair classifier")
    p.add_argument("--data", required=True)
    p.add_argument("--pretrained", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--log", default=None)
    p.add_argument("--ablation", default="full", choices=tsn.ABLATION_NAMES)
    p.add_argument("--adapter", default="default",
                   choices=sorted(dataio.COLUMN_ADAPTERS))
    p.add_argument("--seed", type=int, default=None)
    add_config_flags(p)

    p = sub.add_parser("evaluate", help="score a pair manifest")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--pairs", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--threads", type=int, default=4)
    p.add_argument("--adapter", default="default",
                   choices=sorted(dataio.COLUMN_ADAPTERS))
    add_summary_flags(p)

    p = sub.add_parser("sweep", help="choose the window and kernel sizes")
    p.add_argument("--data", required=True)
    p.add_argument("--windows", type=int, nargs="+",
                   default=list(tsn.WINDOW_CHOICES))
    p.add_argument("--kernels", type=int, nargs="+",
                   default=list(tsn.KERNEL_CHOICES))
    p.add_argument("--no-pretrain", dest="pretrain", action="store_false",
                   help="train the no-pretrain variant")
    p.add_argument("--adapter", default="default",
                   choices=sorted(dataio.COLUMN_ADAPTERS))
    p.add_argument("--seed", type=int, default=None)
    add_summary_flags(p)
    add_config_flags(p)

    return parser


def run(args):
    if args.command == "synth":
        cmd_synth(users=args.users, samples=args.samples, seed=args.seed,
                  out=args.out, t_min=args.t_min, t_max=args.t_max,
                  separation=args.separation)
    elif args.command == "pairs":
        cmd_pairs(args.data, args.out, n_pairs=args.n_pairs, seed=args.seed,
                  split=args.split, ratio=args.split_ratio,
                  adapter=args.adapter)
    elif args.command == "pretrain":
        cmd_pretrain(config_from_args(args), args.data, args.out,
                     log=args.log, seed=args.seed, adapter=args.adapter)
    elif args.command == "finetune":
        cmd_finetune(config_from_args(args), args.data,
                     pretrained=args.pretrained, out=args.out,
                     ablation=args.ablation, log=args.log, seed=args.seed,
                     adapter=args.adapter)
    elif args.command == "evaluate":
        cmd_evaluate(args.model, args.data, args.pairs, out=args.out,
                     threads=args.threads, adapter=args.adapter,
                     log_file=args.log_file, fdate=args.fdate)
    elif args.command == "sweep":
        cmd_sweep(config_from_args(args), args.data,
                  windows=tuple(args.windows), kernels=tuple(args.kernels),
                  pretrain=args.pretrain, seed=args.seed,
                  adapter=args.adapter, log_file=args.log_file,
                  fdate=args.fdate)


def main(argv=None):
    """Run one command and return its exit code."""
    args = build_parser().parse_args(argv)
    try:
        run(args)
    except TouchError as err:
        print(f">>> Error: {err}")
        return err.exit_code
    except OSError as err:
        print(f">>> Error: {err}")
        return DataError.exit_code
    return 0
