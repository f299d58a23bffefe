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
"""Run configuration: defaults, `key = value` files, and validation.

A configuration file has one setting per line,
::
    # pretraining
    window = 8
    mask_ratio = 0.4
    tcn_channels = [64, 128]
    allow_override = false

Blank lines and text after `#` are ignored. Values given on the command
line take precedence over the file.
"""
import dataclasses
from dataclasses import dataclass, field

import regex

from touchtools.errors import ConfigError
from touchtools.tacn import KERNEL_CHOICES
from touchtools.tokenizer import WINDOW_CHOICES

LINE = regex.compile(r"^\s*(?<key>[A-Za-z_]\w*)\s*=\s*(?<value>.*?)\s*$")
INT = regex.compile(r"^[+-]?\d+$")
FLOAT = regex.compile(r"^[+-]?(\d+\.?\d*|\.\d+)([eE][+-]?\d+)?$")
LIST = regex.compile(r"^\[\s*(?<items>[^\]]*)\]$")


@dataclass
class RunConfig:
    embed_dim: int = 64
    lr: float = 0.01
    batch: int = 128
    enc_layers: int = 8
    heads: int = 4
    dropout: float = 0.2
    regressor_layers: int = 4
    window: int = 8
    mask_ratio: float = 0.4
    vocab: int = 192
    tcn_inputs: int = 64
    tcn_channels: list = field(default_factory=lambda: [64, 128])
    kernel: int = 5
    alpha: float = 1.0
    beta: float = 1.0
    lambda1: float = 0.5
    lambda2: float = 1.0
    margin: float = 1.0
    pretrain_epochs: int = 20
    finetune_epochs: int = 30
    momentum: float = 0.99
    tau: float = 1.0
    usage_weight: float = 1.0
    ff_dim: int = 128
    fusion_heads: int = 4
    reduction: int = 4
    head_hidden: int = 64
    n_pairs: int = 2000
    split_ratio: float = 0.8
    swap_prob: float = 0.5
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    threads: int = 4
    allow_override: bool = False
    seed: int = 0


DEFAULTS = RunConfig()

KEYS_INT = ["embed_dim", "batch", "enc_layers", "heads", "regressor_layers",
            "window", "vocab", "tcn_inputs", "kernel", "pretrain_epochs",
            "finetune_epochs", "ff_dim", "fusion_heads", "reduction",
            "head_hidden", "n_pairs", "threads", "seed"]

KEYS_FLOAT = ["lr", "dropout", "mask_ratio", "alpha", "beta", "lambda1",
              "lambda2", "margin", "momentum", "tau", "usage_weight",
              "split_ratio", "swap_prob", "beta1", "beta2", "adam_eps"]

KEYS_BOOL = ["allow_override"]

KEYS_LIST = ["tcn_channels"]

# Must be at least 1
KEYS_POSITIVE = ["embed_dim", "batch", "enc_layers", "heads",
                 "regressor_layers", "window", "vocab", "tcn_inputs",
                 "kernel", "ff_dim", "fusion_heads", "reduction",
                 "head_hidden", "n_pairs"]


def parse_value(key, text):
    """Convert the text of a setting to the type of `key`."""
    if key in KEYS_BOOL:
        low = text.lower()
        if low in ("true", "yes", "1"):
            return True
        if low in ("false", "no", "0"):
            return False
        raise ConfigError(f"'{key}' must be true or false, got '{text}'")

    if key in KEYS_LIST:
        match = LIST.match(text)
        items = match.group("items") if match else text
        values = [v.strip() for v in items.split(",") if v.strip()]
        if not values or not all(INT.match(v) for v in values):
            raise ConfigError(f"'{key}' must be a list of integers, "
                              f"got '{text}'")
        return [int(v) for v in values]

    if key in KEYS_INT:
        if not INT.match(text):
            raise ConfigError(f"'{key}' must be an integer, got '{text}'")
        return int(text)

    if key in KEYS_FLOAT:
        if not FLOAT.match(text):
            raise ConfigError(f"'{key}' must be a number, got '{text}'")
        return float(text)

    raise ConfigError(f"unknown setting '{key}'")


def read_config_file(file):
    """Read the settings of a configuration file.

    Returns
    -------
    dict
        Values by name, converted to their types.

    Raises
    ------
    ConfigError
        If the file doesn't exist, or a line is malformed
        or names an unknown setting; the message gives the line.
    """
    try:
        with open(file, "r", encoding="utf-8") as fd:
            lines = fd.readlines()
    except (FileNotFoundError, IsADirectoryError, PermissionError) as err:
        raise ConfigError(f"cannot read configuration file; {err}") from None

    values = {}
    for num, line in enumerate(lines, start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        match = LINE.match(line)
        if not match:
            raise ConfigError(f"{file}, line {num}: expected 'key = value', "
                              f"got '{line}'")
        key = match.group("key")
        try:
            values[key] = parse_value(key, match.group("value"))
        except ConfigError as err:
            raise ConfigError(f"{file}, line {num}: {err}") from None

    return values


def validate_config(cfg):
    """Check the values of a configuration.

    Every offending setting is collected, and a single `ConfigError`
    lists all of their names.
    """
    bad = []
    for key in KEYS_POSITIVE:
        if getattr(cfg, key) < 1:
            bad.append(f"{key}={getattr(cfg, key)} (must be positive)")

    for key in ("lr", "margin", "tau", "adam_eps"):
        if not getattr(cfg, key) > 0:
            bad.append(f"{key}={getattr(cfg, key)} (must be positive)")

    for key in ("alpha", "beta", "lambda1", "lambda2", "usage_weight",
                "pretrain_epochs", "finetune_epochs", "threads", "seed"):
        if getattr(cfg, key) < 0:
            bad.append(f"{key}={getattr(cfg, key)} (must not be negative)")

    if cfg.alpha == 0 and cfg.beta == 0:
        bad.append("alpha, beta (must not both be zero)")
    if cfg.lambda1 == 0 and cfg.lambda2 == 0:
        bad.append("lambda1, lambda2 (must not both be zero)")

    for key in ("mask_ratio", "split_ratio"):
        if not 0 < getattr(cfg, key) < 1:
            bad.append(f"{key}={getattr(cfg, key)} (must be in (0, 1))")
    for key in ("momentum", "swap_prob"):
        if not 0 <= getattr(cfg, key) <= 1:
            bad.append(f"{key}={getattr(cfg, key)} (must be in [0, 1])")
    if not 0 <= cfg.dropout < 1:
        bad.append(f"dropout={cfg.dropout} (must be in [0, 1))")
    for key in ("beta1", "beta2"):
        if not 0 <= getattr(cfg, key) < 1:
            bad.append(f"{key}={getattr(cfg, key)} (must be in [0, 1))")

    if cfg.heads >= 1 and cfg.embed_dim % cfg.heads:
        bad.append(f"embed_dim, heads ({cfg.embed_dim} is not divisible "
                   f"by {cfg.heads})")
    if cfg.tcn_inputs != cfg.embed_dim:
        bad.append(f"tcn_inputs={cfg.tcn_inputs} (must equal "
                   f"embed_dim={cfg.embed_dim})")
    if not cfg.tcn_channels or min(cfg.tcn_channels) < 1:
        bad.append(f"tcn_channels={cfg.tcn_channels} (must be positive)")
    elif cfg.fusion_heads >= 1 and cfg.tcn_channels[-1] % cfg.fusion_heads:
        bad.append(f"tcn_channels, fusion_heads ({cfg.tcn_channels[-1]} is "
                   f"not divisible by {cfg.fusion_heads})")
    elif cfg.reduction >= 1 and cfg.tcn_channels[-1] < cfg.reduction:
        bad.append(f"reduction={cfg.reduction} (larger than "
                   f"{cfg.tcn_channels[-1]} channels)")

    if not cfg.allow_override:
        if cfg.window not in WINDOW_CHOICES:
            bad.append(f"window={cfg.window} (choose from "
                       f"{list(WINDOW_CHOICES)} or set allow_override)")
        if cfg.kernel not in KERNEL_CHOICES:
            bad.append(f"kernel={cfg.kernel} (choose from "
                       f"{list(KERNEL_CHOICES)} or set allow_override)")

    if bad:
        raise ConfigError("invalid configuration: " + "; ".join(bad))
    return cfg


def make_config(file=None, overrides=None):
    """Build a validated configuration.

    Parameters
    ----------
    file: str, optional
        It defaults to `None`. A configuration file applied over
        the defaults.
    overrides: dict, optional
        It defaults to `None`. Values applied last, for example from
        command line flags; entries that are `None` are skipped.

    Returns
    -------
    RunConfig
    """
    values = read_config_file(file) if file else {}
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key not in KEYS_INT + KEYS_FLOAT + KEYS_BOOL + KEYS_LIST:
            raise ConfigError(f"unknown setting '{key}'")
        values[key] = value

    # The convolutions read the encoder output
    if "embed_dim" in values and "tcn_inputs" not in values:
        values["tcn_inputs"] = values["embed_dim"]

    cfg = dataclasses.replace(DEFAULTS, **values)
    cfg.tcn_channels = list(cfg.tcn_channels)
    return validate_config(cfg)


def config_lines(cfg):
    """Summary lines `name: value`, marking the values left at default."""
    lines = []
    for f in dataclasses.fields(cfg):
        value = getattr(cfg, f.name)
        if value == getattr(DEFAULTS, f.name):
            lines += [f"{f.name}: {value} (default value)"]
        else:
            lines += [f"{f.name}: {value}"]
    return lines


def log_header(cfg):
    """Configuration lines for the header of a CSV log, `name = value`."""
    return [f"{f.name} = {getattr(cfg, f.name)}"
            for f in dataclasses.fields(cfg)]
