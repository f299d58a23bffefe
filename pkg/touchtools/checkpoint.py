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
"""Binary checkpoint files.

Layout, all numbers little-endian
::
    b"TSQN"  u32 version  u32 count
    count times:
        u16 name length, UTF-8 name, u8 rank, rank x u32 dims,
        float32 data in C order
    u32 CRC32 of every byte before it

Tensors are written sorted by name, so the same tensors
always give the same bytes. Files are written to a temporary name
and renamed, so an interrupted save leaves no partial checkpoint.

Besides the parameters a checkpoint holds `meta.*` vectors with the sizes
of the model, so that a file can be checked against a configuration.
"""
import os
import struct
import zlib

import numpy as np

import touchtools.funcs as funcs
import touchtools.tensor as tn
from touchtools.errors import CheckpointError
from touchtools.touchseqnet import ABLATION_NAMES

MAGIC = b"TSQN"
VERSION = 1
HPARAMS = "meta.hparams"
CHANNELS = "meta.tcn_channels"
VARIANT = "meta.variant"
HPARAM_KEYS = ("window", "embed_dim", "enc_layers", "heads", "ff_dim",
               "regressor_layers", "vocab", "kernel", "fusion_heads",
               "reduction", "head_hidden")


def _as_array(value):
    if isinstance(value, tn.Tensor):
        value = value.data
    return np.ascontiguousarray(np.asarray(value, dtype="<f4"))


def encode_checkpoint(tensors):
    """Serialize a dictionary of tensors or arrays to bytes."""
    out = [MAGIC, struct.pack("<II", VERSION, len(tensors))]

    for name in sorted(tensors):
        data = _as_array(tensors[name])
        raw = name.encode("utf-8")
        if len(raw) > 0xFFFF:
            raise CheckpointError(f"tensor name too long: '{name[:40]}...'")
        if data.ndim > 0xFF:
            raise CheckpointError(f"tensor '{name}' has too many axes")
        out.append(struct.pack("<H", len(raw)))
        out.append(raw)
        out.append(struct.pack(f"<B{data.ndim}I", data.ndim, *data.shape))
        out.append(data.tobytes(order="C"))

    payload = b"".join(out)
    return payload + struct.pack("<I", zlib.crc32(payload) & 0xFFFFFFFF)


def decode_checkpoint(blob, source="checkpoint"):
    """Parse checkpoint bytes into a dictionary of `float32` arrays.

    Raises `CheckpointError` for a wrong magic or version,
    a CRC mismatch, truncated data, or repeated names.
    """
    if len(blob) < len(MAGIC) + 12:
        raise CheckpointError(f"{source}: file too short")
    if blob[:4] != MAGIC:
        raise CheckpointError(f"{source}: not a checkpoint "
                              f"(magic {blob[:4]!r})")

    payload, crc = blob[:-4], struct.unpack("<I", blob[-4:])[0]
    if zlib.crc32(payload) & 0xFFFFFFFF != crc:
        raise CheckpointError(f"{source}: CRC mismatch, the file is "
                              "corrupted")

    version, count = struct.unpack_from("<II", payload, 4)
    if version != VERSION:
        raise CheckpointError(f"{source}: unsupported version {version}")

    pos = 12
    tensors = {}
    try:
        for _ in range(count):
            (n,) = struct.unpack_from("<H", payload, pos)
            pos += 2
            name = payload[pos:pos + n].decode("utf-8")
            pos += n
            (rank,) = struct.unpack_from("<B", payload, pos)
            pos += 1
            shape = struct.unpack_from(f"<{rank}I", payload, pos)
            pos += 4 * rank
            size = int(np.prod(shape, dtype=np.int64))
            if pos + 4 * size > len(payload):
                raise CheckpointError(f"{source}: data of '{name}' "
                                      "is truncated")
            data = np.frombuffer(payload, dtype="<f4", count=size,
                                 offset=pos).reshape(shape)
            pos += 4 * size
            if name in tensors:
                raise CheckpointError(f"{source}: tensor '{name}' "
                                      "appears twice")
            tensors[name] = data.astype(np.float32)
    except (struct.error, UnicodeDecodeError) as err:
        raise CheckpointError(f"{source}: malformed tensor table; "
                              f"{err}") from None

    if pos != len(payload):
        raise CheckpointError(f"{source}: {len(payload) - pos} unexpected "
                              "trailing bytes")
    return tensors


def save_checkpoint(tensors, file):
    """Write tensors to `file` atomically; return the file name."""
    return funcs.atomic_write(file, encode_checkpoint(tensors), mode="wb")


def load_checkpoint(file):
    if not file or not os.path.exists(file):
        raise CheckpointError(f"checkpoint does not exist: {file}")
    with open(file, "rb") as fd:
        blob = fd.read()
    return decode_checkpoint(blob, source=file)


def hparams_vector(cfg):
    return np.array([getattr(cfg, k) for k in HPARAM_KEYS], dtype=np.float32)


def with_meta(params, cfg, variant=None):
    """Parameters plus the `meta.*` entries describing the model."""
    out = dict(params)
    out[HPARAMS] = hparams_vector(cfg)
    out[CHANNELS] = np.array(cfg.tcn_channels, dtype=np.float32)
    if variant is not None:
        out[VARIANT] = np.array([ABLATION_NAMES.index(variant)],
                                dtype=np.float32)
    return out


def check_hparams(tensors, cfg, keys=HPARAM_KEYS):
    """Raise `CheckpointError` naming every size that differs from `cfg`."""
    if HPARAMS not in tensors:
        return
    stored = dict(zip(HPARAM_KEYS, tensors[HPARAMS].tolist()))
    bad = [f"{k}={int(stored[k])} (config {getattr(cfg, k)})"
           for k in keys if k in stored and stored[k] != getattr(cfg, k)]
    if bad:
        raise CheckpointError("checkpoint was made with other sizes: "
                              + ", ".join(bad))


def stored_settings(tensors):
    """Sizes and variant recorded in a checkpoint, as a dictionary."""
    out = {}
    if HPARAMS in tensors:
        out.update({k: int(v) for k, v in
                    zip(HPARAM_KEYS, tensors[HPARAMS].tolist())})
    if CHANNELS in tensors:
        out["tcn_channels"] = [int(c) for c in tensors[CHANNELS].tolist()]
    if VARIANT in tensors:
        out["variant"] = ABLATION_NAMES[int(tensors[VARIANT][0])]
    return out


def parameters(tensors):
    """Entries that are model parameters, without `meta.*`."""
    return {k: v for k, v in tensors.items() if not k.startswith("meta.")}
