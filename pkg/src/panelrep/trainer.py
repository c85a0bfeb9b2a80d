"""Training: windowed backprop through time, Adam, checkpoints.

Each report is trained sentence by sentence.  A window's loss covers one
sentence's teacher-forced generation, so word-level recurrences never
backpropagate into earlier sentences' generation unrolls.  The context
chain feeding the window (the notes plus the ground-truth report prefix,
all cheap to encode) is rebuilt on the window's tape: without that,
nothing ever teaches the chain to carry information -- the notes, most
importantly -- forward to the sentences that need it.  Every window ends
with norm clipping and one Adam update.

After the last content sentence, one extra window is trained on the first
empty (filler) sentence so the model learns to terminate reports; the
remaining filler sentences carry no loss.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .attnreg import RegWeights, attention_cost
from .autodiff import (
    ShapeError,
    Tape,
    Tensor,
    backward,
    clamp_max,
    clamp_min,
    log,
    neg,
    slice_cols,
)
from .config import Ablations, TrainConfig
from .dataio import (
    BadMagicError,
    Sample,
    StructuralError,
    dump_tensor,
    load_tensor,
    read_tensor_file,
)
from .encoders import (
    ContextState,
    bilstm_encode,
    encode_images,
    fold_context,
    fwd_hidden_size,
)
from .generator import teacher_forced_sentence
from .optim import AdamState, adam_step, clip_global_norm
from .seeding import make_rng
from .textpipe import (
    REPORT_LEN,
    TokenSequence,
    Vocabulary,
    build_vocab,
    embed,
    encode_report,
    encode_sentence,
    tokenize,
)

CHECKPOINT_MAGIC = b"CR8C"
PROB_FLOOR = 1e-12


def init_params(
    config: TrainConfig, seed: int | None = None, dtype=np.float32
) -> dict[str, Tensor]:
    """Fresh parameter tensors: scaled-uniform weights, zero biases,
    embedding uniform in [-1, 1].  Same seed, same bits."""
    if config.vocab_size is None:
        raise ValueError("config.vocab_size must be set before init_params")
    rng = make_rng(config.seed if seed is None else seed, "init")
    V, E, H = config.vocab_size, config.embed, config.hidden
    d, att = config.channels, config.attn_dim
    params: dict[str, Tensor] = {}

    def weight(name: str, fan_in: int, fan_out: int, shape=None):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        arr = rng.uniform(-limit, limit, shape or (fan_in, fan_out))
        params[name] = Tensor(arr.astype(dtype), requires_grad=True)

    def bias(name: str, width: int):
        params[name] = Tensor(np.zeros((1, width), dtype=dtype), requires_grad=True)

    params["emb"] = Tensor(
        rng.uniform(-1.0, 1.0, (V, E)).astype(dtype), requires_grad=True
    )
    weight("img_fc_w", config.n_images * d, H)
    bias("img_fc_b", H)

    if not config.ablations.vanilla:
        hf = fwd_hidden_size(H)
        hb = H - hf
        weight("prior_fwd_wx", E, 4 * hf)
        weight("prior_fwd_wh", hf, 4 * hf)
        bias("prior_fwd_b", 4 * hf)
        weight("prior_bwd_wx", E, 4 * hb)
        weight("prior_bwd_wh", hb, 4 * hb)
        bias("prior_bwd_b", 4 * hb)
        weight("prior_j_w", H, H)
        bias("prior_j_b", H)
        weight("prior_f_w", 2 * H, H)
        bias("prior_f_b", H)
        weight("attn_sp_w", d, att)
        weight("attn_sp_u", H, att)
        bias("attn_sp_b", att)
        weight("attn_sp_v", att, 1)
        weight("attn_im_w", d, att)
        weight("attn_im_u", H, att)
        bias("attn_im_b", att)
        weight("attn_im_v", att, 1)
        weight("sent_gate_l_w", H, 1)
        bias("sent_gate_l_b", 1)
        weight("sent_gate_f_w", H, 1)
        bias("sent_gate_f_b", 1)
        gen_in = d + H + E
    else:
        gen_in = H + E

    weight("gen_wx", gen_in, 4 * H)
    weight("gen_wh", H, 4 * H)
    bias("gen_b", 4 * H)
    weight("out_wh", H, E)
    if not config.ablations.vanilla:
        weight("out_wl", d, E)
    weight("out_wf", H, E)
    weight("out_wv", E, V)
    return params


def sequence_nll(probs_per_step: list[Tensor], target: TokenSequence) -> Tensor:
    """Negative log-likelihood of the target sentence under the model.

    Step t scores target token t (end marker included, start marker
    excluded); filler positions carry no loss.  Probabilities are floored
    before the log so an early zero cannot produce -inf.
    """
    steps = target.effective_length - 1
    if len(probs_per_step) != steps:
        raise ShapeError(
            f"{len(probs_per_step)} step distributions for {steps} targets"
        )
    total = None
    for t in range(steps):
        tid = int(target.ids[t + 1])
        picked = slice_cols(probs_per_step[t], tid, tid + 1)
        # float32 softmax rounding can spill a hair above 1; cap both ends
        term = neg(log(clamp_max(clamp_min(picked, PROB_FLOOR), 1.0)))
        total = term if total is None else total + term
    return total


@dataclass(frozen=True)
class EncodedSample:
    id: str
    features: np.ndarray
    notes: TokenSequence
    report: list[TokenSequence]
    n_content: int


def build_corpus_vocab(samples: list[Sample], min_count: int = 2) -> Vocabulary:
    corpus = []
    for s in samples:
        corpus.append(tokenize(s.notes))
        for sentence in s.report:
            corpus.append(tokenize(sentence))
    return build_vocab(corpus, min_count=min_count)


def encode_samples(samples: list[Sample], vocab: Vocabulary) -> list[EncodedSample]:
    out = []
    for s in samples:
        if not s.report:
            raise ValueError(f"sample {s.id} has an empty report")
        sentences = [encode_sentence(tokenize(x), vocab) for x in s.report]
        out.append(
            EncodedSample(
                id=s.id,
                features=read_tensor_file(s.features).data,
                notes=encode_sentence(tokenize(s.notes), vocab),
                report=encode_report(sentences),
                n_content=min(len(sentences), REPORT_LEN),
            )
        )
    return out


@dataclass(frozen=True)
class WindowStats:
    sentence_index: int
    nll: float
    c_alpha: float
    total: float


def _window_context(
    sample: EncodedSample,
    m: int,
    panel,
    params: dict[str, Tensor],
    config: TrainConfig,
) -> ContextState:
    """Context vector for window ``m``, rebuilt from the report prefix.

    The whole context chain (notes unless disabled, then each ground-truth
    sentence before m) is re-encoded on the current tape, so every window
    trains the chain to carry what later sentences need.  The generation
    unrolls of earlier sentences stay outside the graph.
    """
    texts: list[TokenSequence] = []
    if not config.ablations.no_notes:
        texts.append(sample.notes)
    texts.extend(sample.report[:m])
    context = ContextState(F=panel.F_init, sentence_index=m - 1 - len(texts))
    for text in texts:
        summary = bilstm_encode(embed(text, params["emb"]), params, config)
        context = fold_context(summary, context, params)
    return context


def tbtt_step(
    sample: EncodedSample,
    params: dict[str, Tensor],
    opt_state: AdamState,
    config: TrainConfig,
) -> list[WindowStats]:
    """Train every window of one report, updating params per window."""
    ab = config.ablations
    weights = config.effective_reg()
    n_windows = min(sample.n_content + 1, REPORT_LEN)
    stats = []
    for m in range(n_windows):
        target = sample.report[m]
        try:
            with Tape() as tape:
                panel = encode_images(sample.features, params, config)
                if ab.vanilla:
                    context = ContextState(F=panel.F_init, sentence_index=m)
                else:
                    context = _window_context(sample, m, panel, params, config)

                probs, kappa_mat, alpha_mat = teacher_forced_sentence(
                    None if ab.vanilla else panel, context, target, params, config
                )
                nll = sequence_nll(probs, target)
                total = nll
                reg_value = 0.0
                if alpha_mat is not None and not weights.inactive:
                    reg = attention_cost(alpha_mat, weights)
                    if config.reg_kappa and kappa_mat is not None:
                        reg = reg + attention_cost(kappa_mat, weights)
                    reg_value = reg.item()
                    total = total + reg
                grads = backward(tape, total)
        except ArithmeticError as exc:
            raise ArithmeticError(
                f"non-finite value in sample {sample.id}, sentence {m}"
            ) from exc

        named = {
            name: grads.get(p, np.zeros_like(p.data)) for name, p in params.items()
        }
        clip_global_norm(named, config.clip_norm)
        adam_step(params, named, opt_state, config.lr)
        stats.append(
            WindowStats(
                sentence_index=m,
                nll=nll.item(),
                c_alpha=reg_value,
                total=nll.item() + reg_value,
            )
        )
    return stats


@dataclass
class FitResult:
    params: dict[str, Tensor]
    opt: AdamState
    log_lines: list[str] = field(default_factory=list)
    epoch_means: list[float] = field(default_factory=list)


def fit(
    samples: list[EncodedSample],
    config: TrainConfig,
    vocab: Vocabulary,
    out_dir=None,
    verbose: bool = False,
) -> FitResult:
    """Epoch loop over shuffled samples; logs one line per window update.

    When ``out_dir`` is given, the checkpoint is rewritten after every
    epoch and the training log saved at the end.
    """
    if not samples:
        raise ValueError("training split is empty")
    params = init_params(config)
    opt = AdamState.for_params(params)
    result = FitResult(params=params, opt=opt)
    rng = make_rng(config.seed, "shuffle")
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)

    step = 0
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(samples))
        totals = []
        for idx in order:
            for st in tbtt_step(samples[int(idx)], params, opt, config):
                step += 1
                result.log_lines.append(
                    f"epoch={epoch} step={step} nll={st.nll:.6f} "
                    f"c_alpha={st.c_alpha:.6f} total={st.total:.6f}"
                )
                totals.append(st.total)
        result.epoch_means.append(float(np.mean(totals)))
        if verbose:
            print(f"epoch {epoch}: mean window loss {result.epoch_means[-1]:.4f}")
        if out_dir is not None:
            save_checkpoint(
                out_dir / "checkpoint.cr8c",
                Checkpoint(params=params, opt=opt, config=config, vocab=vocab),
            )
    if out_dir is not None:
        (out_dir / "train.log").write_text(
            "\n".join(result.log_lines) + "\n", encoding="utf-8"
        )
    return result


@dataclass
class Checkpoint:
    params: dict[str, Tensor]
    opt: AdamState
    config: TrainConfig
    vocab: Vocabulary


_CONFIG_FIELDS = (
    "epochs",
    "lr",
    "clip_norm",
    "seed",
    "n_images",
    "spatial",
    "channels",
    "embed",
    "hidden",
    "min_count",
)
_FLAG_FIELDS = ("no_notes", "no_sal", "no_tdvar", "no_xu", "no_reg", "vanilla")
_REG_FIELDS = ("lambda1", "lambda2", "lambda3", "delta")


def _config_entries(config: TrainConfig) -> list[tuple[str, np.ndarray]]:
    entries = []
    for name in _CONFIG_FIELDS:
        entries.append((f"config/{name}", np.array([getattr(config, name)], float)))
    entries.append(
        ("config/attn", np.array([-1.0 if config.attn is None else float(config.attn)]))
    )
    entries.append(
        ("config/vocab_size", np.array([float(config.vocab_size or -1)]))
    )
    entries.append(("config/reg_kappa", np.array([float(config.reg_kappa)])))
    for name in _REG_FIELDS:
        entries.append((f"config/{name}", np.array([getattr(config.reg, name)], float)))
    for name in _FLAG_FIELDS:
        entries.append(
            (f"config/{name}", np.array([float(getattr(config.ablations, name))]))
        )
    return entries


def _config_from_entries(values: dict[str, np.ndarray]) -> TrainConfig:
    def num(name):
        return float(values[f"config/{name}"][0])

    attn = num("attn")
    vocab_size = num("vocab_size")
    return TrainConfig(
        epochs=int(num("epochs")),
        lr=num("lr"),
        clip_norm=num("clip_norm"),
        seed=int(num("seed")),
        n_images=int(num("n_images")),
        spatial=int(num("spatial")),
        channels=int(num("channels")),
        embed=int(num("embed")),
        hidden=int(num("hidden")),
        min_count=int(num("min_count")),
        attn=None if attn < 0 else int(attn),
        vocab_size=None if vocab_size < 0 else int(vocab_size),
        reg_kappa=bool(num("reg_kappa")),
        reg=RegWeights(
            lambda1=num("lambda1"),
            lambda2=num("lambda2"),
            lambda3=num("lambda3"),
            delta=num("delta"),
        ),
        ablations=Ablations(**{name: bool(num(name)) for name in _FLAG_FIELDS}),
    )


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    """Single-file checkpoint: config scalars, vocab bytes, params, Adam state."""
    entries: list[tuple[str, np.ndarray]] = _config_entries(ckpt.config)
    vocab_text = "\n".join(ckpt.vocab.decode(i) for i in range(ckpt.vocab.size))
    entries.append(
        (
            "vocab/utf8",
            np.frombuffer(vocab_text.encode("utf-8"), dtype=np.uint8).astype(
                np.float64
            ),
        )
    )
    for name in sorted(ckpt.params):
        entries.append((f"param/{name}", ckpt.params[name].data))
    entries.append(("adam/step", np.array([float(ckpt.opt.step)])))
    entries.append(("adam/beta1", np.array([ckpt.opt.beta1])))
    entries.append(("adam/beta2", np.array([ckpt.opt.beta2])))
    entries.append(("adam/eps", np.array([ckpt.opt.eps])))
    for name in sorted(ckpt.opt.m):
        entries.append((f"adam/m/{name}", ckpt.opt.m[name]))
    for name in sorted(ckpt.opt.v):
        entries.append((f"adam/v/{name}", ckpt.opt.v[name]))

    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(entries)))
        for name, arr in entries:
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            dump_tensor(np.asarray(arr), fh)


def load_checkpoint(path) -> Checkpoint:
    values: dict[str, np.ndarray] = {}
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != CHECKPOINT_MAGIC:
            raise BadMagicError(f"bad checkpoint magic {magic!r}")
        raw = fh.read(4)
        if len(raw) != 4:
            raise StructuralError("truncated checkpoint header")
        (count,) = struct.unpack("<I", raw)
        for _ in range(count):
            raw = fh.read(2)
            if len(raw) != 2:
                raise StructuralError("truncated entry name length")
            (name_len,) = struct.unpack("<H", raw)
            name = fh.read(name_len).decode("utf-8")
            values[name] = load_tensor(fh)

    config = _config_from_entries(values)
    vocab_text = bytes(values["vocab/utf8"].astype(np.uint8)).decode("utf-8")
    vocab = Vocabulary(vocab_text.split("\n"))
    params = {
        name[len("param/") :]: Tensor(arr, requires_grad=True)
        for name, arr in values.items()
        if name.startswith("param/")
    }
    opt = AdamState(
        m={n[len("adam/m/") :]: arr for n, arr in values.items() if n.startswith("adam/m/")},
        v={n[len("adam/v/") :]: arr for n, arr in values.items() if n.startswith("adam/v/")},
        step=int(values["adam/step"][0]),
        beta1=float(values["adam/beta1"][0]),
        beta2=float(values["adam/beta2"][0]),
        eps=float(values["adam/eps"][0]),
    )
    return Checkpoint(params=params, opt=opt, config=config, vocab=vocab)
