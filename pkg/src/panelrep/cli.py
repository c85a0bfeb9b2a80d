"""Command-line interface: synth, train, generate, evaluate.

Every option can also be supplied through ``--config FILE`` holding
``key = value`` lines (``#`` starts a comment); explicit flags win over
the file, the file wins over defaults, and unknown keys are rejected.
Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import dataclass
from pathlib import Path
from types import SimpleNamespace

from .attnreg import RegWeights
from .config import Ablations, TrainConfig
from .dataio import (
    Sample,
    SynthSpec,
    load_manifest,
    read_tensor_file,
    synth_generate,
    write_tensor_file,
)
from .encoders import encode_images
from .generator import generate_report
from .metrics import evaluate_corpus
from .textpipe import decode_sentence, encode_sentence, tokenize, write_vocab
from .trainer import build_corpus_vocab, encode_samples, fit, load_checkpoint


@dataclass(frozen=True)
class Opt:
    kind: type
    default: object = None
    required: bool = False
    flag: bool = False
    choices: tuple[str, ...] | None = None
    help: str = ""


_SPECS: dict[str, dict[str, Opt]] = {
    "synth": {
        "out": Opt(str, required=True, help="output dataset directory"),
        "samples": Opt(int, required=True, help="training sample count"),
        "images": Opt(int, 3, help="panel size"),
        "patterns": Opt(int, 4, help="number of plantable patterns"),
        "seed": Opt(int, 0),
        "grid-a": Opt(int, 16, help="spatial positions per grid"),
        "grid-d": Opt(int, 32, help="channels per grid"),
        "contexts": Opt(str, "alpha,beta", help="comma-separated notes tokens"),
        "valid": Opt(int, 0, help="validation sample count"),
        "test": Opt(int, 0, help="test sample count"),
    },
    "train": {
        "data": Opt(str, required=True, help="dataset directory"),
        "out": Opt(str, required=True, help="output directory"),
        "seed": Opt(int, 0),
        "epochs": Opt(int, 30),
        "lr": Opt(float, 0.001),
        "lambda1": Opt(float, 1.0),
        "lambda2": Opt(float, 0.5),
        "lambda3": Opt(float, 0.5),
        "delta": Opt(float, 0.001),
        "clip-norm": Opt(float, 5.0),
        "embed-dim": Opt(int, 512),
        "hidden-dim": Opt(int, 512),
        "attn-dim": Opt(int, None),
        "min-count": Opt(int, 2),
        "no-notes": Opt(bool, False, flag=True),
        "no-sal": Opt(bool, False, flag=True),
        "no-tdvar": Opt(bool, False, flag=True),
        "no-xu": Opt(bool, False, flag=True),
        "no-reg": Opt(bool, False, flag=True),
        "vanilla": Opt(bool, False, flag=True),
        "reg-kappa": Opt(bool, False, flag=True),
        "quiet": Opt(bool, False, flag=True),
    },
    "generate": {
        "checkpoint": Opt(str, required=True, help="checkpoint file"),
        "data": Opt(str, required=True),
        "split": Opt(str, "test", choices=("train", "valid", "test")),
        "out": Opt(str, required=True, help="output directory"),
        "dump-attention": Opt(bool, False, flag=True),
    },
    "evaluate": {
        "generated": Opt(str, required=True, help="directory of generated reports"),
        "data": Opt(str, required=True),
        "split": Opt(str, "test", choices=("train", "valid", "test")),
        "out": Opt(str, required=True, help="metrics JSON path"),
        "label": Opt(str, "model", help="row label in the metric table"),
    },
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="panelrep",
        description="Panel-to-report generator: synthesize data, train, "
        "generate, and evaluate.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for command, spec in _SPECS.items():
        p = sub.add_parser(command)
        p.add_argument("--config", default=None, help="key = value settings file")
        for key, opt in spec.items():
            name = f"--{key}"
            if opt.flag:
                p.add_argument(name, action="store_true", default=None, help=opt.help)
            else:
                p.add_argument(
                    name, type=opt.kind, default=None, choices=opt.choices,
                    help=opt.help,
                )
    return parser


def _parse_value(raw: str, opt: Opt, key: str) -> object:
    raw = raw.strip()
    if opt.flag or opt.kind is bool:
        low = raw.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"cannot read {raw!r} as a boolean for {key}")
    return opt.kind(raw)


def read_config_file(path, spec: dict[str, Opt]) -> dict[str, object]:
    values: dict[str, object] = {}
    for lineno, line in enumerate(
        Path(path).read_text(encoding="utf-8").splitlines(), start=1
    ):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected 'key = value'")
        key, raw = (part.strip() for part in line.split("=", 1))
        key = key.replace("_", "-")
        if key not in spec:
            raise ValueError(f"{path}:{lineno}: unknown key {key!r}")
        values[key] = _parse_value(raw, spec[key], key)
    return values


def merge_options(args: argparse.Namespace, parser: argparse.ArgumentParser):
    spec = _SPECS[args.command]
    try:
        from_file = (
            read_config_file(args.config, spec) if args.config is not None else {}
        )
    except (OSError, ValueError) as exc:
        parser.error(str(exc))
    merged = {}
    for key, opt in spec.items():
        attr = key.replace("-", "_")
        cli_value = getattr(args, attr)
        if cli_value is not None:
            merged[attr] = cli_value
        elif key in from_file:
            merged[attr] = from_file[key]
        else:
            merged[attr] = opt.default
        if opt.required and merged[attr] is None:
            parser.error(f"{args.command}: --{key} is required")
        if opt.choices and merged[attr] not in opt.choices:
            parser.error(f"{args.command}: --{key} must be one of {opt.choices}")
    return SimpleNamespace(**merged)


def cmd_synth(opts) -> int:
    spec = SynthSpec(
        n_samples=opts.samples,
        n_images=opts.images,
        n_patterns=opts.patterns,
        grid_a=opts.grid_a,
        grid_d=opts.grid_d,
        seed=opts.seed,
        context_tokens=tuple(t.strip() for t in opts.contexts.split(",") if t.strip()),
        n_valid=opts.valid,
        n_test=opts.test,
    )
    splits = synth_generate(spec, opts.out)
    sizes = {name: len(samples) for name, samples in splits.items()}
    print(f"wrote dataset to {opts.out}: {sizes}")
    return 0


def _config_from_train_opts(opts, n_images, spatial, channels, vocab_size) -> TrainConfig:
    return TrainConfig(
        epochs=opts.epochs,
        lr=opts.lr,
        reg=RegWeights(
            lambda1=opts.lambda1,
            lambda2=opts.lambda2,
            lambda3=opts.lambda3,
            delta=opts.delta,
        ),
        clip_norm=opts.clip_norm,
        seed=opts.seed,
        ablations=Ablations(
            no_notes=opts.no_notes,
            no_sal=opts.no_sal,
            no_tdvar=opts.no_tdvar,
            no_xu=opts.no_xu,
            no_reg=opts.no_reg,
            vanilla=opts.vanilla,
        ),
        n_images=n_images,
        spatial=spatial,
        channels=channels,
        embed=opts.embed_dim,
        hidden=opts.hidden_dim,
        attn=opts.attn_dim,
        vocab_size=vocab_size,
        reg_kappa=opts.reg_kappa,
        min_count=opts.min_count,
    )


def _grid_dims(features) -> tuple[int, int, int]:
    shape = features.shape
    if len(shape) == 4:
        return shape[0], shape[1] * shape[2], shape[3]
    if len(shape) == 3:
        return shape
    raise ValueError(f"feature file must be rank 3 or 4, got shape {shape}")


def cmd_train(opts) -> int:
    splits = load_manifest(opts.data)
    train_split = splits["train"]
    if not train_split:
        raise RuntimeError("training split is empty")
    vocab = build_corpus_vocab(train_split, min_count=opts.min_count)
    encoded = encode_samples(train_split, vocab)
    n_images, spatial, channels = _grid_dims(encoded[0].features)
    config = _config_from_train_opts(opts, n_images, spatial, channels, vocab.size)
    out_dir = Path(opts.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_vocab(vocab, out_dir / "vocab.txt")
    result = fit(encoded, config, vocab, out_dir=out_dir, verbose=not opts.quiet)
    print(
        f"trained {config.epochs} epochs on {len(encoded)} samples "
        f"(vocab {vocab.size}); final mean window loss "
        f"{result.epoch_means[-1]:.4f}"
    )
    print(f"checkpoint: {out_dir / 'checkpoint.cr8c'}")
    return 0


def _load_split(data_dir, split: str) -> list[Sample]:
    return load_manifest(data_dir)[split]


def cmd_generate(opts) -> int:
    ckpt = load_checkpoint(opts.checkpoint)
    samples = _load_split(opts.data, opts.split)
    out_dir = Path(opts.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    for sample in samples:
        features = read_tensor_file(sample.features)
        panel = encode_images(features, ckpt.params, ckpt.config)
        notes = encode_sentence(tokenize(sample.notes), ckpt.vocab)
        sentences, traces = generate_report(panel, notes, ckpt.params, ckpt.config)
        lines = [
            " ".join(decode_sentence(s, ckpt.vocab))
            for s in sentences
            if not s.is_pad
        ]
        (out_dir / f"{sample.id}.txt").write_text(
            "\n".join(lines) + ("\n" if lines else ""), encoding="utf-8"
        )
        if opts.dump_attention:
            from .figures import save_attention_heatmaps

            for m, trace in enumerate(traces):
                if trace.alpha.shape[0] == 0:
                    continue
                write_tensor_file(out_dir / f"{sample.id}.s{m}.alpha.cr8t", trace.alpha)
                write_tensor_file(out_dir / f"{sample.id}.s{m}.kappa.cr8t", trace.kappa)
            save_attention_heatmaps(
                traces, out_dir / f"{sample.id}.attention.png", title=sample.id
            )
    print(f"generated {len(samples)} reports into {out_dir}")
    return 0


def _flatten_report_tokens(sentences: list[str]) -> list[str]:
    tokens: list[str] = []
    for sentence in sentences:
        tokens.extend(tokenize(sentence))
    return tokens


def cmd_evaluate(opts) -> int:
    samples = _load_split(opts.data, opts.split)
    if not samples:
        raise RuntimeError(f"split {opts.split!r} is empty")
    gen_dir = Path(opts.generated)
    candidates = []
    references = []
    for sample in samples:
        path = gen_dir / f"{sample.id}.txt"
        if not path.exists():
            raise RuntimeError(f"missing generated report {path}")
        candidates.append(
            _flatten_report_tokens(path.read_text(encoding="utf-8").splitlines())
        )
        references.append(_flatten_report_tokens(sample.report))
    report = evaluate_corpus(candidates, references)

    out = Path(opts.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(report.to_json() + "\n", encoding="utf-8")
    base = out.with_suffix("") if out.suffix else out
    base.with_suffix(".tsv").write_text(report.to_tsv(opts.label), encoding="utf-8")
    from .figures import save_metric_bars

    save_metric_bars(report, base.with_suffix(".png"), title=opts.label)
    print(report.to_table(opts.label))
    return 0


_COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "generate": cmd_generate,
    "evaluate": cmd_evaluate,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    opts = merge_options(args, parser)
    try:
        return _COMMANDS[args.command](opts)
    except Exception as exc:  # runtime failures exit 1 with a message
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
