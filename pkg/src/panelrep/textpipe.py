"""Tokenization, vocabulary, fixed-length sentence encoding, embedding lookup.

Sentences are padded to 40 slots: a start marker, at most 38 payload
tokens, an end marker, then filler.  Reports are padded to exactly 7
sentences.  Rare tokens (corpus count below the threshold) encode to the
unknown id.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .autodiff import Tensor, gather_rows

NULL_ID = 0
UNK_ID = 1
NEWLINE_ID = 2
EOS_ID = 3

NULL_TOKEN = "<NULL>"
UNK_TOKEN = "<UNK>"
NEWLINE_TOKEN = "<NEWLINE>"
EOS_TOKEN = "<EOS>"

RESERVED_TOKENS = (NULL_TOKEN, UNK_TOKEN, NEWLINE_TOKEN, EOS_TOKEN)

SENTENCE_LEN = 40
MAX_PAYLOAD = SENTENCE_LEN - 2
REPORT_LEN = 7

_STRIP_CHARS = ".,;:()\"'"


def tokenize(text: str) -> list[str]:
    """Lowercase whitespace tokens with surrounding punctuation stripped.

    Interior symbols survive ("1+", "?anca"); tokens that strip to
    nothing are dropped.
    """
    out = []
    for raw in text.lower().split():
        tok = raw.strip(_STRIP_CHARS)
        if tok:
            out.append(tok)
    return out


def split_sentences(text: str) -> list[str]:
    """Split raw report text into sentences on the period character."""
    return [part.strip() for part in text.split(".") if part.strip()]


class Vocabulary:
    """Token/id bijection with fixed reserved ids."""

    def __init__(self, tokens: list[str]):
        if tuple(tokens[:4]) != RESERVED_TOKENS:
            raise ValueError("vocabulary must start with the four reserved tokens")
        self._id_to_token = list(tokens)
        self._token_to_id = {tok: i for i, tok in enumerate(tokens)}
        if len(self._token_to_id) != len(self._id_to_token):
            raise ValueError("duplicate token in vocabulary")

    @property
    def size(self) -> int:
        return len(self._id_to_token)

    def encode(self, token: str) -> int:
        return self._token_to_id.get(token, UNK_ID)

    def encode_tokens(self, tokens: list[str]) -> list[int]:
        return [self.encode(t) for t in tokens]

    def decode(self, idx: int) -> str:
        return self._id_to_token[idx]

    def decode_ids(self, ids) -> list[str]:
        return [self._id_to_token[int(i)] for i in ids]

    def __contains__(self, token: str) -> bool:
        return token in self._token_to_id

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, Vocabulary)
            and self._id_to_token == other._id_to_token
        )


def build_vocab(corpus: list[list[str]], min_count: int = 2) -> Vocabulary:
    """Vocabulary over a tokenized corpus; tokens below min_count become UNK.

    Kept tokens get ids in first-occurrence order after the reserved block.
    """
    if min_count < 1:
        raise ValueError(f"min_count must be >= 1, got {min_count}")
    counts: Counter[str] = Counter()
    order: list[str] = []
    seen: set[str] = set()
    for sentence in corpus:
        for tok in sentence:
            counts[tok] += 1
            if tok not in seen:
                seen.add(tok)
                order.append(tok)
    tokens = list(RESERVED_TOKENS) + [t for t in order if counts[t] >= min_count]
    return Vocabulary(tokens)


@dataclass(frozen=True)
class TokenSequence:
    """One fixed-length encoded sentence: start, payload, end, filler."""

    ids: np.ndarray
    effective_length: int

    def __post_init__(self):
        ids = np.asarray(self.ids, dtype=np.int32)
        object.__setattr__(self, "ids", ids)
        eff = self.effective_length
        if ids.shape != (SENTENCE_LEN,):
            raise ValueError(f"sentence must have {SENTENCE_LEN} slots, got {ids.shape}")
        if not (2 <= eff <= SENTENCE_LEN):
            raise ValueError(f"effective_length out of range: {eff}")
        if ids[0] != NEWLINE_ID:
            raise ValueError("sentence must start with the start marker")
        if ids[eff - 1] != EOS_ID:
            raise ValueError("sentence must end with the end marker")
        if np.any(ids[1 : eff - 1] == EOS_ID):
            raise ValueError("end marker may only appear once")
        if np.any(ids[eff:] != NULL_ID):
            raise ValueError("slots past the end marker must be filler")

    @property
    def payload(self) -> list[int]:
        return [int(i) for i in self.ids[1 : self.effective_length - 1]]

    @property
    def is_pad(self) -> bool:
        return self.effective_length == 2


def encode_sentence(tokens: list[str], vocab: Vocabulary) -> TokenSequence:
    """Encode tokens into a fixed 40-slot sentence, truncating to fit."""
    body = vocab.encode_tokens(tokens)[:MAX_PAYLOAD]
    ids = np.full(SENTENCE_LEN, NULL_ID, dtype=np.int32)
    ids[0] = NEWLINE_ID
    ids[1 : 1 + len(body)] = body
    ids[1 + len(body)] = EOS_ID
    return TokenSequence(ids=ids, effective_length=len(body) + 2)


def pad_sentence() -> TokenSequence:
    return encode_sentence([], Vocabulary(list(RESERVED_TOKENS)))


def encode_report(sentences: list[TokenSequence]) -> list[TokenSequence]:
    """Pad or truncate to exactly 7 sentences."""
    out = list(sentences[:REPORT_LEN])
    while len(out) < REPORT_LEN:
        out.append(pad_sentence())
    return out


def decode_sentence(seq: TokenSequence, vocab: Vocabulary) -> list[str]:
    return vocab.decode_ids(seq.payload)


def embed(seq: TokenSequence, table: Tensor) -> Tensor:
    """Embedding rows for the effective prefix of ``seq``; differentiable."""
    if int(seq.ids[: seq.effective_length].max()) >= table.shape[0]:
        raise ValueError("token id out of range for the embedding table")
    return gather_rows(table, seq.ids[: seq.effective_length])


def write_vocab(vocab: Vocabulary, path) -> None:
    Path(path).write_text(
        "\n".join(vocab.decode(i) for i in range(vocab.size)) + "\n",
        encoding="utf-8",
    )


def read_vocab(path) -> Vocabulary:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    return Vocabulary([line for line in lines if line])
