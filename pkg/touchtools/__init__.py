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
"""Tools to pretrain and train models of touch gestures for continuous
authentication.

Gestures are read from CSV files, preprocessed, and windowed.
A masked autoencoder is pretrained on the windows without labels,
and its projection and encoder are then used in a Siamese classifier
that decides whether two gestures come from the same user.
::
    import touchtools as tt

    samples = tt.gen_dataset(n_users=8, samples_per_user=40, seed=1)
    cfg = tt.make_config()
    data = tt.preprocess_samples(samples, cfg.window)

    pre = tt.run_pretraining(data, cfg, seed=1)
    model = tt.build_from_pretrained(pre.params, cfg)
    train_pairs, val_pairs = tt.split_pairs(data, cfg, seed=1)
    result = tt.train(model, train_pairs, val_pairs, seed=1)
    print(tt.evaluate(result.model, val_pairs))

All the numerical work is done with `numpy` by the small
reverse-mode differentiation engine in `touchtools.tensor`.
"""
from touchtools.errors import TouchError
from touchtools.errors import ConfigError
from touchtools.errors import DataError
from touchtools.errors import NumericError

from touchtools.funcs import resolve_seed
from touchtools.funcs import print_content

from touchtools.tensor import Tensor
from touchtools.tensor import parameter
from touchtools.optim import AdamState
from touchtools.optim import adam_step
from touchtools.gradcheck import check_gradients

from touchtools.dataio import GestureSample
from touchtools.dataio import ProcessedSample
from touchtools.dataio import PairBatch
from touchtools.dataio import load_gesture_csv
from touchtools.dataio import write_gesture_csv
from touchtools.dataio import first_order_difference
from touchtools.dataio import zscore_normalize
from touchtools.dataio import pad_and_window_mask
from touchtools.dataio import preprocess_sample
from touchtools.dataio import preprocess_samples
from touchtools.dataio import make_pairs
from touchtools.dataio import split_samples
from touchtools.dataio import write_pair_manifest
from touchtools.dataio import read_pair_manifest

from touchtools.synthgen import UserProfile
from touchtools.synthgen import gen_user
from touchtools.synthgen import gen_sample
from touchtools.synthgen import gen_dataset

from touchtools.tokenizer import WindowConfig
from touchtools.tokenizer import Codebook
from touchtools.tokenizer import window_project
from touchtools.tokenizer import token_logits
from touchtools.tokenizer import gumbel_softmax_sample
from touchtools.tokenizer import hard_tokens

from touchtools.tmae import positional_encoding
from touchtools.tmae import split_visible_masked
from touchtools.tmae import encode_visible
from touchtools.tmae import momentum_encode
from touchtools.tmae import regress_masked
from touchtools.tmae import predict_codewords
from touchtools.tmae import momentum_update
from touchtools.tmae import alignment_loss
from touchtools.tmae import code_usage_loss
from touchtools.tmae import pretrain_loss
from touchtools.tmae import run_pretraining
from touchtools.tmae import assign_tokens

from touchtools.tacn import TacnConfig
from touchtools.tacn import residual_block
from touchtools.tacn import tacn_forward
from touchtools.tacn import mha_fusion

from touchtools.fingerca import channel_descriptor
from touchtools.fingerca import recalibrate

from touchtools.touchseqnet import ABLATIONS
from touchtools.touchseqnet import build_from_pretrained
from touchtools.touchseqnet import embed
from touchtools.touchseqnet import pair_logit
from touchtools.touchseqnet import contrastive_loss
from touchtools.touchseqnet import ce_loss
from touchtools.touchseqnet import total_loss
from touchtools.touchseqnet import split_pairs
from touchtools.touchseqnet import train
from touchtools.touchseqnet import evaluate
from touchtools.touchseqnet import ablation_study
from touchtools.touchseqnet import SweepResult
from touchtools.touchseqnet import sweep

from touchtools.metrics import EvalRecord
from touchtools.metrics import accuracy
from touchtools.metrics import f1
from touchtools.metrics import auc
from touchtools.metrics import roc_curve
from touchtools.metrics import token_ranks
from touchtools.metrics import hits_at_k
from touchtools.metrics import ndcg_at_10
from touchtools.metrics import code_perplexity

from touchtools.checkpoint import save_checkpoint
from touchtools.checkpoint import load_checkpoint
from touchtools.checkpoint import with_meta
from touchtools.checkpoint import stored_settings

from touchtools.config import RunConfig
from touchtools.config import make_config
from touchtools.config import read_config_file
from touchtools.config import config_lines

# Use of the imports so that flake8 does not report them as unused
True if TouchError else False
True if ConfigError else False
True if DataError else False
True if NumericError else False

True if resolve_seed else False
True if print_content else False

True if Tensor else False
True if parameter else False
True if AdamState else False
True if adam_step else False
True if check_gradients else False

True if GestureSample else False
True if ProcessedSample else False
True if PairBatch else False
True if load_gesture_csv else False
True if write_gesture_csv else False
True if first_order_difference else False
True if zscore_normalize else False
True if pad_and_window_mask else False
True if preprocess_sample else False
True if preprocess_samples else False
True if make_pairs else False
True if split_samples else False
True if write_pair_manifest else False
True if read_pair_manifest else False

True if UserProfile else False
True if gen_user else False
True if gen_sample else False
True if gen_dataset else False

True if WindowConfig else False
True if Codebook else False
True if window_project else False
True if token_logits else False
True if gumbel_softmax_sample else False
True if hard_tokens else False

True if positional_encoding else False
True if split_visible_masked else False
True if encode_visible else False
True if momentum_encode else False
True if regress_masked else False
True if predict_codewords else False
True if momentum_update else False
True if alignment_loss else False
True if code_usage_loss else False
True if pretrain_loss else False
True if run_pretraining else False
True if assign_tokens else False

True if TacnConfig else False
True if residual_block else False
True if tacn_forward else False
True if mha_fusion else False

True if channel_descriptor else False
True if recalibrate else False

True if ABLATIONS else False
True if build_from_pretrained else False
True if embed else False
True if pair_logit else False
True if contrastive_loss else False
True if ce_loss else False
True if total_loss else False
True if split_pairs else False
True if train else False
True if evaluate else False
True if ablation_study else False
True if SweepResult else False
True if sweep else False

True if EvalRecord else False
True if accuracy else False
True if f1 else False
True if auc else False
True if roc_curve else False
True if token_ranks else False
True if hits_at_k else False
True if ndcg_at_10 else False
True if code_perplexity else False

True if save_checkpoint else False
True if load_checkpoint else False
True if with_meta else False
True if stored_settings else False

True if RunConfig else False
True if make_config else False
True if read_config_file else False
True if config_lines else False
