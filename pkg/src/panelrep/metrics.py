"""Corpus text-generation metrics: BLEU-1..4, ROUGE-L, and a light METEOR.

Inputs are token lists (one flattened report per sample, filler
sentences already dropped).  BLEU pools n-gram counts over the corpus;
ROUGE-L and METEOR are averaged per sample.  The METEOR variant aligns
exact matches only -- no stemming or synonym resources.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, field


def _ngrams(tokens: list[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def bleu(
    candidates: list[list[str]], references: list[list[str]], max_n: int = 4
) -> float:
    """Corpus BLEU: geometric mean of clipped precisions with brevity penalty.

    A zero match count at any order gives a score of exactly zero.
    """
    if not candidates or len(candidates) != len(references):
        raise ValueError(
            f"corpus misaligned: {len(candidates)} candidates, "
            f"{len(references)} references"
        )
    if not 1 <= max_n <= 4:
        raise ValueError(f"max_n must be in 1..4, got {max_n}")
    clipped = [0] * max_n
    totals = [0] * max_n
    cand_len = 0
    ref_len = 0
    for cand, ref in zip(candidates, references):
        cand_len += len(cand)
        ref_len += len(ref)
        for n in range(1, max_n + 1):
            counts = _ngrams(cand, n)
            ref_counts = _ngrams(ref, n)
            clipped[n - 1] += sum(min(c, ref_counts[g]) for g, c in counts.items())
            totals[n - 1] += max(0, len(cand) - n + 1)
    if any(c == 0 for c in clipped) or any(t == 0 for t in totals):
        return 0.0
    log_prec = sum(math.log(c / t) for c, t in zip(clipped, totals)) / max_n
    brevity = 1.0 if cand_len >= ref_len else math.exp(1.0 - ref_len / cand_len)
    return brevity * math.exp(log_prec)


def _lcs_length(a: list[str], b: list[str]) -> int:
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b, start=1):
            cur.append(prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1]))
        prev = cur
    return prev[-1]


def rouge_l(candidate: list[str], reference: list[str]) -> float:
    """F1 over the longest common subsequence."""
    lcs = _lcs_length(candidate, reference)
    if lcs == 0:
        return 0.0
    precision = lcs / len(candidate)
    recall = lcs / len(reference)
    return 2.0 * precision * recall / (precision + recall)


def _align(candidate: list[str], reference: list[str]) -> list[tuple[int, int]]:
    """Exact-match alignment that keeps runs contiguous where it can.

    Greedy with one-step lookahead: extend the current run if possible,
    otherwise pick a slot whose successor matches the next candidate
    token, otherwise take the earliest free slot.  Not a full minimal-
    chunk search, but it finds the contiguous grouping in ordinary text.
    """
    available: dict[str, list[int]] = {}
    for j, tok in enumerate(reference):
        available.setdefault(tok, []).append(j)
    pairs: list[tuple[int, int]] = []
    used: set[int] = set()
    for i, tok in enumerate(candidate):
        slots = [j for j in available.get(tok, ()) if j not in used]
        if not slots:
            continue
        j = slots[0]
        if pairs and pairs[-1][0] == i - 1 and pairs[-1][1] + 1 in slots:
            j = pairs[-1][1] + 1
        else:
            nxt = candidate[i + 1] if i + 1 < len(candidate) else None
            for slot in slots:
                if (
                    nxt is not None
                    and slot + 1 < len(reference)
                    and reference[slot + 1] == nxt
                    and slot + 1 not in used
                ):
                    j = slot
                    break
        used.add(j)
        pairs.append((i, j))
    return pairs


def meteor_lite(candidate: list[str], reference: list[str]) -> float:
    """Recall-weighted harmonic mean with a fragmentation penalty.

    Matches m give P = m/|cand|, R = m/|ref|, Fmean = 10PR/(R + 9P);
    the penalty is 0.5 * (chunks/m)^3 over contiguous aligned runs.
    """
    if not candidate or not reference:
        return 0.0
    pairs = _align(candidate, reference)
    m = len(pairs)
    if m == 0:
        return 0.0
    precision = m / len(candidate)
    recall = m / len(reference)
    fmean = 10.0 * precision * recall / (recall + 9.0 * precision)
    chunks = 1
    for (i0, j0), (i1, j1) in zip(pairs, pairs[1:]):
        if i1 != i0 + 1 or j1 != j0 + 1:
            chunks += 1
    penalty = 0.5 * (chunks / m) ** 3
    return fmean * (1.0 - penalty)


@dataclass
class MetricReport:
    """Six corpus scores plus the per-sample breakdown."""

    bleu1: float
    bleu2: float
    bleu3: float
    bleu4: float
    rouge_l: float
    meteor: float
    per_sample: list[dict[str, float]] = field(default_factory=list)

    COLUMNS = ("BLEU-1", "BLEU-2", "BLEU-3", "BLEU-4", "ROUGE", "METEOR")

    def values(self) -> tuple[float, ...]:
        return (self.bleu1, self.bleu2, self.bleu3, self.bleu4,
                self.rouge_l, self.meteor)

    def to_json(self) -> str:
        payload = {
            "bleu1": self.bleu1,
            "bleu2": self.bleu2,
            "bleu3": self.bleu3,
            "bleu4": self.bleu4,
            "rouge_l": self.rouge_l,
            "meteor": self.meteor,
            "per_sample": self.per_sample,
        }
        return json.dumps(payload, indent=2, sort_keys=True)

    def to_table(self, label: str = "model") -> str:
        header = f"{'':16s}" + "".join(f"{c:>8s}" for c in self.COLUMNS)
        row = f"{label:16s}" + "".join(f"{v:8.4f}" for v in self.values())
        return header + "\n" + row

    def to_tsv(self, label: str = "model") -> str:
        header = "\t".join(("model",) + self.COLUMNS)
        row = "\t".join([label] + [f"{v:.6f}" for v in self.values()])
        return header + "\n" + row + "\n"


def evaluate_corpus(
    candidates: list[list[str]], references: list[list[str]]
) -> MetricReport:
    """Score aligned flattened-report corpora."""
    if len(candidates) != len(references):
        raise ValueError(
            f"corpus misaligned: {len(candidates)} candidates, "
            f"{len(references)} references"
        )
    if not candidates:
        raise ValueError("empty corpus")
    per_sample = []
    for cand, ref in zip(candidates, references):
        per_sample.append(
            {
                "bleu4": bleu([cand], [ref], max_n=4),
                "rouge_l": rouge_l(cand, ref),
                "meteor": meteor_lite(cand, ref),
            }
        )
    return MetricReport(
        bleu1=bleu(candidates, references, 1),
        bleu2=bleu(candidates, references, 2),
        bleu3=bleu(candidates, references, 3),
        bleu4=bleu(candidates, references, 4),
        rouge_l=float(sum(s["rouge_l"] for s in per_sample) / len(per_sample)),
        meteor=float(sum(s["meteor"] for s in per_sample) / len(per_sample)),
        per_sample=per_sample,
    )
