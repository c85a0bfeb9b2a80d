"""Word-by-word sentence generation over an image panel.

Each step attends twice -- first over spatial positions (shared across
images), then over the images themselves -- gates the resulting visual
vector and the sentence context through learned sigmoid scalars, advances
an LSTM, and projects to a distribution over the vocabulary.  Decoding is
greedy; a report is seven sentences chained through the prior encoder.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import (
    Tensor,
    concat,
    gather_rows,
    matmul,
    mul,
    sigmoid,
    slice_axis0,
    softmax_rows,
    tanh,
    transpose,
    zeros,
)
from .config import TrainConfig
from .encoders import ContextState, PanelFeatures, encode_prior, lstm_cell
from .textpipe import (
    EOS_ID,
    NEWLINE_ID,
    SENTENCE_LEN,
    NULL_ID,
    TokenSequence,
    pad_sentence,
)


@dataclass(frozen=True)
class AttentionTrace:
    """Recorded attention weights for one generated sentence.

    One row per generated word; ``kappa`` is over spatial positions,
    ``alpha`` over panel images.  Empty (zero-row) for pad sentences and
    for the variant with attention disabled.
    """

    kappa: np.ndarray
    alpha: np.ndarray


def empty_trace(config: TrainConfig) -> AttentionTrace:
    return AttentionTrace(
        kappa=np.zeros((0, config.spatial), dtype=np.float32),
        alpha=np.zeros((0, config.n_images), dtype=np.float32),
    )


def attend_spatial(
    A: Tensor, h_prev: Tensor, params: dict[str, Tensor]
) -> tuple[Tensor, Tensor]:
    """Spatial attention shared across images.

    Positions are scored on the image-averaged features so a single
    weight row applies to every image; returns the (1, spatial) weights
    and the per-image weighted features (n_images, channels).
    """
    a_bar = A.mean(axis=0)  # (spatial, channels)
    scores = matmul(
        tanh(
            matmul(a_bar, params["attn_sp_w"])
            + matmul(h_prev, params["attn_sp_u"])
            + params["attn_sp_b"]
        ),
        params["attn_sp_v"],
    )  # (spatial, 1)
    kappa = softmax_rows(transpose(scores))
    weighted = [
        matmul(kappa, slice_axis0(A, n)) for n in range(A.shape[0])
    ]  # each (1, channels)
    return kappa, concat(weighted, axis=0)


def attend_images(
    Z: Tensor, h_prev: Tensor, params: dict[str, Tensor]
) -> tuple[Tensor, Tensor]:
    """Attention over the per-image vectors; returns weights and their blend."""
    scores = matmul(
        tanh(
            matmul(Z, params["attn_im_w"])
            + matmul(h_prev, params["attn_im_u"])
            + params["attn_im_b"]
        ),
        params["attn_im_v"],
    )  # (n_images, 1)
    alpha = softmax_rows(transpose(scores))
    return alpha, matmul(alpha, Z)


@dataclass(frozen=True)
class SentinelGates:
    beta_visual: Tensor  # (1, 1), in (0, 1)
    beta_context: Tensor  # (1, 1), in (0, 1)


def sentinel(h_prev: Tensor, params: dict[str, Tensor]) -> SentinelGates:
    """Sigmoid gates deciding how much visual and context signal enters the LSTM."""
    return SentinelGates(
        beta_visual=sigmoid(
            matmul(h_prev, params["sent_gate_l_w"]) + params["sent_gate_l_b"]
        ),
        beta_context=sigmoid(
            matmul(h_prev, params["sent_gate_f_w"]) + params["sent_gate_f_b"]
        ),
    )


def output_distribution(
    s_prev: Tensor,
    h: Tensor,
    L: Tensor | None,
    F: Tensor,
    params: dict[str, Tensor],
) -> Tensor:
    """Vocabulary distribution from the deep output layer.

    The previous word embedding, hidden state, visual vector, and context
    vector are all projected into embedding space, summed, mapped to
    vocabulary logits, and normalized.  ``L`` is None when attention is
    disabled.  Logits are deliberately unbounded: squashing them through
    tanh pins saturated steps at zero gradient and freezes learning.
    """
    inner = s_prev + matmul(h, params["out_wh"]) + matmul(F, params["out_wf"])
    if L is not None:
        inner = inner + matmul(L, params["out_wl"])
    return softmax_rows(matmul(inner, params["out_wv"]))


def step(
    prev_emb: Tensor,
    h: Tensor,
    c: Tensor,
    panel: PanelFeatures | None,
    F: Tensor,
    params: dict[str, Tensor],
    config: TrainConfig,
) -> tuple[Tensor, Tensor, Tensor, Tensor | None, Tensor | None]:
    """One word step: attention, gates, LSTM advance, output distribution.

    Returns (probs, h_new, c_new, kappa_row, alpha_row); the attention
    rows are None in the attention-free variant.
    """
    if config.ablations.vanilla:
        x = concat([F, prev_emb], axis=1)
        kappa = alpha = L = None
    else:
        kappa, Z = attend_spatial(panel.A, h, params)
        alpha, L = attend_images(Z, h, params)
        gates = sentinel(h, params)
        x = concat(
            [mul(gates.beta_visual, L), mul(gates.beta_context, F), prev_emb], axis=1
        )
    h_new, c_new = lstm_cell(x, h, c, params["gen_wx"], params["gen_wh"], params["gen_b"])
    probs = output_distribution(prev_emb, h_new, L, F, params)
    return probs, h_new, c_new, kappa, alpha


def generate_sentence(
    panel: PanelFeatures,
    context: ContextState,
    params: dict[str, Tensor],
    config: TrainConfig,
) -> tuple[TokenSequence, AttentionTrace]:
    """Greedy decode of one sentence, recording attention rows per word.

    Stops at the end marker; if the sentence fills all 40 slots the final
    token is forced to the end marker.
    """
    hidden = config.hidden
    dtype = params["gen_wh"].dtype
    h = zeros((1, hidden), dtype=dtype)
    c = zeros((1, hidden), dtype=dtype)
    ids = [NEWLINE_ID]
    kappa_rows: list[np.ndarray] = []
    alpha_rows: list[np.ndarray] = []
    for pos in range(1, SENTENCE_LEN):
        prev_emb = gather_rows(params["emb"], [ids[-1]])
        probs, h, c, kappa, alpha = step(
            prev_emb, h, c, panel, context.F, params, config
        )
        if kappa is not None:
            kappa_rows.append(kappa.data[0].copy())
            alpha_rows.append(alpha.data[0].copy())
        token = int(np.argmax(probs.data[0]))
        if pos == SENTENCE_LEN - 1:
            token = EOS_ID
        ids.append(token)
        if token == EOS_ID:
            break
    full = np.full(SENTENCE_LEN, NULL_ID, dtype=np.int32)
    full[: len(ids)] = ids
    seq = TokenSequence(ids=full, effective_length=len(ids))
    if kappa_rows:
        trace = AttentionTrace(kappa=np.stack(kappa_rows), alpha=np.stack(alpha_rows))
    else:
        trace = empty_trace(config)
    return seq, trace


def teacher_forced_sentence(
    panel: PanelFeatures | None,
    context: ContextState,
    target: TokenSequence,
    params: dict[str, Tensor],
    config: TrainConfig,
) -> tuple[list[Tensor], Tensor | None, Tensor | None]:
    """Run the generator over a ground-truth sentence.

    Step t consumes target token t-1 and predicts target token t (the
    end marker included, the start marker excluded).  Returns the per-step
    distributions and, when attention is on, the stacked kappa and alpha
    matrices as differentiable tensors.
    """
    hidden = config.hidden
    dtype = params["gen_wh"].dtype
    h = zeros((1, hidden), dtype=dtype)
    c = zeros((1, hidden), dtype=dtype)
    probs_steps: list[Tensor] = []
    kappa_rows: list[Tensor] = []
    alpha_rows: list[Tensor] = []
    for t in range(1, target.effective_length):
        prev_emb = gather_rows(params["emb"], [int(target.ids[t - 1])])
        probs, h, c, kappa, alpha = step(
            prev_emb, h, c, panel, context.F, params, config
        )
        probs_steps.append(probs)
        if kappa is not None:
            kappa_rows.append(kappa)
            alpha_rows.append(alpha)
    kappa_mat = concat(kappa_rows, axis=0) if kappa_rows else None
    alpha_mat = concat(alpha_rows, axis=0) if alpha_rows else None
    return probs_steps, kappa_mat, alpha_mat


def generate_report(
    panel: PanelFeatures,
    notes: TokenSequence,
    params: dict[str, Tensor],
    config: TrainConfig,
) -> tuple[list[TokenSequence], list[AttentionTrace]]:
    """Greedy decode of a full seven-sentence report.

    The first context comes from the clinical notes unless disabled; each
    generated sentence is folded into the context for the next.  Once a
    sentence comes out empty the report is finished and the remaining
    slots are filler.
    """
    ab = config.ablations
    if ab.vanilla or ab.no_notes:
        context = ContextState(F=panel.F_init, sentence_index=0)
    else:
        context = encode_prior(
            notes, ContextState(F=panel.F_init, sentence_index=-1), params, config
        )
    sentences: list[TokenSequence] = []
    traces: list[AttentionTrace] = []
    ended = False
    for m in range(7):
        if ended:
            sentences.append(pad_sentence())
            traces.append(empty_trace(config))
            continue
        sent, trace = generate_sentence(panel, context, params, config)
        sentences.append(sent)
        traces.append(trace)
        if sent.is_pad:
            ended = True
        elif m < 6 and not ab.vanilla:
            context = encode_prior(sent, context, params, config)
    return sentences, traces
