"""Image-panel encoding and the sentence-context chain.

The image encoder turns a fixed-order stack of per-image feature grids
into flattened local features plus one global vector.  The prior encoder
folds the previous sentence (or the clinical notes for the first
sentence) together with the previous context vector into the next
context vector, via a bidirectional LSTM and two FC layers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import (
    ShapeError,
    Tensor,
    concat,
    matmul,
    mul,
    sigmoid,
    slice_cols,
    slice_rows,
    tanh,
    zeros,
)
from .config import TrainConfig
from .textpipe import TokenSequence, embed


@dataclass(frozen=True)
class PanelFeatures:
    """Ordered per-image local feature grids plus the global image vector.

    The leading axis is the panel slot; slot order is meaningful and must
    be preserved end to end.
    """

    A: Tensor  # (n_images, spatial, channels)
    F_init: Tensor  # (1, hidden)

    @property
    def n_images(self) -> int:
        return self.A.shape[0]


@dataclass(frozen=True)
class ContextState:
    """Context vector for sentence ``sentence_index`` of a report."""

    F: Tensor  # (1, hidden)
    sentence_index: int = 0


def linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    return matmul(x, w) + b


def lstm_cell(
    x: Tensor, h: Tensor, c: Tensor, wx: Tensor, wh: Tensor, b: Tensor
) -> tuple[Tensor, Tensor]:
    """One LSTM step with fused gate weights laid out [input|forget|output|cand]."""
    hid = wh.shape[0]
    z = matmul(x, wx) + matmul(h, wh) + b
    i = sigmoid(slice_cols(z, 0, hid))
    f = sigmoid(slice_cols(z, hid, 2 * hid))
    o = sigmoid(slice_cols(z, 2 * hid, 3 * hid))
    g = tanh(slice_cols(z, 3 * hid, 4 * hid))
    c_new = mul(f, c) + mul(i, g)
    h_new = mul(o, tanh(c_new))
    return h_new, c_new


def run_lstm(seq: Tensor, wx: Tensor, wh: Tensor, b: Tensor) -> Tensor:
    """Final hidden state after reading the rows of ``seq`` in order."""
    hid = wh.shape[0]
    h = zeros((1, hid), dtype=seq.dtype)
    c = zeros((1, hid), dtype=seq.dtype)
    for t in range(seq.shape[0]):
        h, c = lstm_cell(slice_rows(seq, t, t + 1), h, c, wx, wh, b)
    return h


def fwd_hidden_size(hidden: int) -> int:
    # forward direction takes the extra unit when hidden is odd
    return hidden - hidden // 2


def encode_images(
    raw_features: Tensor | np.ndarray, params: dict[str, Tensor], config: TrainConfig
) -> PanelFeatures:
    """Flatten per-image grids and project their pooled summary to F_init.

    Accepts either raw backbone output (n_images, h, w, channels) or
    already-flattened grids (n_images, spatial, channels).  The global
    vector is an FC over the concatenation of each image's spatial mean,
    so slot identity survives the pooling.
    """
    data = raw_features.data if isinstance(raw_features, Tensor) else np.asarray(
        raw_features
    )
    if not np.all(np.isfinite(data)):
        raise ShapeError("image features contain non-finite values")
    if data.ndim == 4:
        n, hh, ww, dd = data.shape
        flat = data.reshape(n, hh * ww, dd)
    elif data.ndim == 3:
        flat = data
    else:
        raise ShapeError(f"image features must be rank 3 or 4, got shape {data.shape}")
    n, a, d = flat.shape
    if (n, a, d) != (config.n_images, config.spatial, config.channels):
        raise ShapeError(
            f"feature grid {(n, a, d)} does not match configured dims "
            f"{(config.n_images, config.spatial, config.channels)}"
        )
    dtype = params["img_fc_w"].dtype
    A = Tensor(flat.astype(dtype, copy=False))
    pooled = Tensor(flat.mean(axis=1).reshape(1, n * d).astype(dtype))
    f_init = linear(pooled, params["img_fc_w"], params["img_fc_b"])
    return PanelFeatures(A=A, F_init=f_init)


def bilstm_encode(
    sentence: Tensor, params: dict[str, Tensor], config: TrainConfig
) -> Tensor:
    """Fixed-width summary of an embedded sentence (both reading directions)."""
    if sentence.ndim != 2 or sentence.shape[0] < 1:
        raise ShapeError(f"bilstm input must be (steps, embed), got {sentence.shape}")
    h_fwd = run_lstm(
        sentence, params["prior_fwd_wx"], params["prior_fwd_wh"], params["prior_fwd_b"]
    )
    steps = sentence.shape[0]
    reversed_rows = concat(
        [slice_rows(sentence, t, t + 1) for t in range(steps - 1, -1, -1)], axis=0
    )
    h_bwd = run_lstm(
        reversed_rows,
        params["prior_bwd_wx"],
        params["prior_bwd_wh"],
        params["prior_bwd_b"],
    )
    both = concat([h_fwd, h_bwd], axis=1)
    return linear(both, params["prior_j_w"], params["prior_j_b"])


def fold_context(
    summary: Tensor, prev_context: ContextState, params: dict[str, Tensor]
) -> ContextState:
    """Fold one sentence summary into the running context vector."""
    joint = concat([summary, prev_context.F], axis=1)
    f_next = linear(joint, params["prior_f_w"], params["prior_f_b"])
    return ContextState(F=f_next, sentence_index=prev_context.sentence_index + 1)


def encode_prior(
    prev: TokenSequence,
    prev_context: ContextState,
    params: dict[str, Tensor],
    config: TrainConfig,
) -> ContextState:
    """Next context vector from the previous sentence and previous context.

    For the first sentence, callers pass the clinical notes as ``prev``
    and the global image vector as the previous context.
    """
    summary = bilstm_encode(embed(prev, params["emb"]), params, config)
    return fold_context(summary, prev_context, params)
