"""panelrep: report generation from ordered image panels.

A fixed-order set of image feature grids plus free-text notes goes in; a
seven-sentence report comes out.  Generation attends over spatial
positions and over the panel at every word, gated by learned sentinel
scalars, and training shapes the image-attention matrix with coverage,
salience, and temporal-variation costs.  Everything runs on the in-house
tape autodiff in :mod:`panelrep.autodiff`.
"""

from .attnreg import (
    RegWeights,
    attention_cost,
    coverage_cost,
    report_attention_cost,
    salience_score,
    variation_score,
)
from .autodiff import Tape, Tensor, backward, grad_check
from .config import Ablations, TrainConfig
from .dataio import Sample, SynthSpec, load_manifest, read_tensor_file, synth_generate
from .encoders import ContextState, PanelFeatures, encode_images, encode_prior
from .generator import AttentionTrace, generate_report, generate_sentence
from .metrics import MetricReport, bleu, evaluate_corpus, meteor_lite, rouge_l
from .optim import AdamState, adam_step, clip_global_norm
from .textpipe import TokenSequence, Vocabulary, build_vocab, tokenize
from .trainer import Checkpoint, fit, init_params, load_checkpoint, save_checkpoint

__version__ = "0.1.0"

__all__ = [
    "Ablations",
    "AdamState",
    "AttentionTrace",
    "Checkpoint",
    "ContextState",
    "MetricReport",
    "PanelFeatures",
    "RegWeights",
    "Sample",
    "SynthSpec",
    "Tape",
    "Tensor",
    "TokenSequence",
    "TrainConfig",
    "Vocabulary",
    "adam_step",
    "attention_cost",
    "backward",
    "bleu",
    "build_vocab",
    "clip_global_norm",
    "coverage_cost",
    "encode_images",
    "encode_prior",
    "evaluate_corpus",
    "fit",
    "generate_report",
    "generate_sentence",
    "grad_check",
    "init_params",
    "load_checkpoint",
    "load_manifest",
    "meteor_lite",
    "read_tensor_file",
    "report_attention_cost",
    "rouge_l",
    "salience_score",
    "save_checkpoint",
    "synth_generate",
    "tokenize",
    "variation_score",
]
