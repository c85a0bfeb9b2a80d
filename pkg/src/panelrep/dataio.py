"""On-disk formats: tensor container, dataset manifests, synthetic data.

Tensor files ("CR8T") hold one dense array: magic, version byte, dtype
byte (0 = float32, 1 = float64), little-endian u16 rank, u32 dims, then
the row-major payload.  Datasets are directories with train/valid/test
JSONL manifests whose lines reference per-sample feature files.

The synthetic generator plants a recoverable channel-block pattern in
each image of a panel and writes reports whose final sentence depends on
both the notes token and the whole pattern multiset, so solving it needs
the notes and every image.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .autodiff import Tensor
from .seeding import make_rng

TENSOR_MAGIC = b"CR8T"
TENSOR_VERSION = 1
_DTYPE_CODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}
_CODE_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}


class TensorFormatError(ValueError):
    """Base for tensor-container parse failures."""


class BadMagicError(TensorFormatError):
    pass


class BadVersionError(TensorFormatError):
    pass


class BadDtypeError(TensorFormatError):
    pass


class StructuralError(TensorFormatError):
    """Header and payload disagree (dims product vs payload length)."""


class ManifestError(ValueError):
    pass


def dump_tensor(array: np.ndarray | Tensor, stream: io.BufferedIOBase) -> None:
    data = array.data if isinstance(array, Tensor) else np.asarray(array)
    if data.dtype not in _DTYPE_CODES:
        raise BadDtypeError(f"unsupported dtype {data.dtype}")
    data = np.ascontiguousarray(data)
    stream.write(TENSOR_MAGIC)
    stream.write(bytes([TENSOR_VERSION, _DTYPE_CODES[data.dtype]]))
    stream.write(struct.pack("<H", data.ndim))
    for extent in data.shape:
        stream.write(struct.pack("<I", extent))
    stream.write(data.astype(data.dtype.newbyteorder("<"), copy=False).tobytes())


def load_tensor(stream: io.BufferedIOBase) -> np.ndarray:
    magic = stream.read(4)
    if magic != TENSOR_MAGIC:
        raise BadMagicError(f"bad magic {magic!r}")
    head = stream.read(2)
    if len(head) != 2:
        raise StructuralError("truncated header")
    version, dtype_code = head
    if version != TENSOR_VERSION:
        raise BadVersionError(f"unsupported version {version}")
    if dtype_code not in _CODE_DTYPES:
        raise BadDtypeError(f"unknown dtype code {dtype_code}")
    dtype = _CODE_DTYPES[dtype_code]
    rank_bytes = stream.read(2)
    if len(rank_bytes) != 2:
        raise StructuralError("truncated rank")
    (rank,) = struct.unpack("<H", rank_bytes)
    dims = []
    for _ in range(rank):
        raw = stream.read(4)
        if len(raw) != 4:
            raise StructuralError("truncated dims")
        dims.append(struct.unpack("<I", raw)[0])
    count = int(np.prod(dims, dtype=np.int64)) if dims else 1
    payload = stream.read(count * dtype.itemsize)
    if len(payload) != count * dtype.itemsize:
        raise StructuralError(
            f"dims {tuple(dims)} promise {count} values but payload holds "
            f"{len(payload) // dtype.itemsize}"
        )
    arr = np.frombuffer(payload, dtype=dtype).reshape(dims)
    return arr.astype(dtype.newbyteorder("=")).copy()


def write_tensor_file(path, array: np.ndarray | Tensor) -> None:
    with open(path, "wb") as fh:
        dump_tensor(array, fh)


def read_tensor_file(path) -> Tensor:
    with open(path, "rb") as fh:
        arr = load_tensor(fh)
        extra = fh.read(1)
    if extra:
        raise StructuralError("trailing bytes after payload")
    return Tensor(arr)


@dataclass(frozen=True)
class Sample:
    id: str
    features: Path
    notes: str
    report: list[str]


SPLIT_FILES = ("train.jsonl", "valid.jsonl", "test.jsonl")


def load_manifest(data_dir) -> dict[str, list[Sample]]:
    """Read the three split manifests under ``data_dir``.

    Feature paths are resolved relative to the directory; malformed lines
    are reported with their line number.
    """
    data_dir = Path(data_dir)
    splits: dict[str, list[Sample]] = {}
    for fname in SPLIT_FILES:
        path = data_dir / fname
        if not path.exists():
            raise ManifestError(f"missing manifest {path}")
        samples = []
        for lineno, line in enumerate(
            path.read_text(encoding="utf-8").splitlines(), start=1
        ):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                sample = Sample(
                    id=str(obj["id"]),
                    features=data_dir / obj["features"],
                    notes=str(obj["notes"]),
                    report=[str(s) for s in obj["report"]],
                )
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise ManifestError(f"{path}:{lineno}: malformed line ({exc})") from exc
            samples.append(sample)
        splits[fname.split(".")[0]] = samples
    return splits


@dataclass(frozen=True)
class SynthSpec:
    """Parameters for the synthetic ordered-panel dataset."""

    n_samples: int
    n_images: int = 3
    n_patterns: int = 4
    grid_a: int = 16
    grid_d: int = 32
    seed: int = 0
    context_tokens: tuple[str, ...] = ("alpha", "beta")
    n_valid: int = 0
    n_test: int = 0

    def __post_init__(self):
        if self.n_patterns < 2 or self.n_images < 2:
            raise ValueError("need at least 2 patterns and 2 images")
        if self.grid_d < self.n_patterns:
            raise ValueError("grid_d must be at least n_patterns")


def pattern_grid(spec: SynthSpec, slot: int, pattern: int) -> np.ndarray:
    """Feature grid for panel slot ``slot`` carrying ``pattern``.

    Grids are keyed by (slot, pattern) only -- two samples showing the
    same pattern in the same slot get identical features, so the images
    carry pattern information and nothing else.
    """
    rng = make_rng(spec.seed, "grid", slot, pattern)
    grid = rng.normal(0.0, 0.05, size=(spec.grid_a, spec.grid_d))
    block = spec.grid_d // spec.n_patterns
    grid[:, pattern * block : (pattern + 1) * block] += 1.0
    return grid.astype(np.float32)


def decode_pattern(grid: np.ndarray, n_patterns: int) -> int:
    """Brute-force recovery of the planted pattern: argmax of block means."""
    block = grid.shape[1] // n_patterns
    means = [
        grid[:, p * block : (p + 1) * block].mean() for p in range(n_patterns)
    ]
    return int(np.argmax(means))


def impression_sentence(spec: SynthSpec, patterns: list[int], context: str) -> str:
    """Final report sentence: depends on the notes token and the multiset.

    The grade is the most frequent planted pattern (smallest index on
    ties), so naming it requires reading the whole panel; the context
    token itself is only recoverable from the notes.
    """
    counts = [patterns.count(p) for p in range(spec.n_patterns)]
    marker = int(np.argmax(counts))
    return f"impression {context} grade{marker}"


def synth_generate(spec: SynthSpec, out_dir) -> dict[str, list[Sample]]:
    """Write a synthetic dataset and return its loaded manifest.

    Samples come in context pairs: consecutive samples share one pattern
    vector but differ in the notes token (and therefore in the final
    report sentence), so the notes are genuinely required.
    """
    out_dir = Path(out_dir)
    (out_dir / "features").mkdir(parents=True, exist_ok=True)
    rng = make_rng(spec.seed, "patterns")
    n_ctx = len(spec.context_tokens)
    total = spec.n_samples + spec.n_valid + spec.n_test
    n_vectors = (total + n_ctx - 1) // n_ctx
    vectors = [
        [int(p) for p in rng.integers(0, spec.n_patterns, size=spec.n_images)]
        for _ in range(n_vectors)
    ]

    counts = {"train": spec.n_samples, "valid": spec.n_valid, "test": spec.n_test}
    index = 0
    for split, count in counts.items():
        lines = []
        for _ in range(count):
            patterns = vectors[index // n_ctx]
            context = spec.context_tokens[index % n_ctx]
            sid = f"s{index:04d}"
            grids = np.stack(
                [pattern_grid(spec, k, p) for k, p in enumerate(patterns)]
            )
            rel = f"features/{sid}.cr8t"
            write_tensor_file(out_dir / rel, grids)
            report = [
                f"image{k} shows pattern{p}" for k, p in enumerate(patterns)
            ] + [impression_sentence(spec, patterns, context)]
            lines.append(
                json.dumps(
                    {"id": sid, "features": rel, "notes": context, "report": report},
                    sort_keys=True,
                )
            )
            index += 1
        (out_dir / f"{split}.jsonl").write_text(
            "\n".join(lines) + ("\n" if lines else ""), encoding="utf-8"
        )
    return load_manifest(out_dir)
