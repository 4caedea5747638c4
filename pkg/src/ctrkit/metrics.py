"""Lexical content-matching metrics: ROUGE-1/2/L, a light METEOR and
micro precision/recall over annotated fact units.

All functions accept any sequence of token strings, including
:class:`~ctrkit.corpus.TokenSeq`.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

from .corpus import (
    DEFAULT_TOKENIZER,
    CtrInstance,
    DatasetError,
    TokenizerOptions,
    concat_highlights,
    iter_jsonl,
    stem,
    tokenize,
)

METRIC_NAMES = ("rouge1", "rouge2", "rougeL", "meteor")


class PRF(NamedTuple):
    precision: float
    recall: float
    f1: float
    degenerate: bool = False


def f_measure(precision: float, recall: float) -> float:
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def _prf(overlap: int, n_cand: int, n_target: int) -> PRF:
    precision = overlap / n_cand if n_cand else 0.0
    recall = overlap / n_target if n_target else 0.0
    return PRF(precision, recall, f_measure(precision, recall), n_cand == 0 or n_target == 0)


def ngrams(tokens: Sequence[str], n: int) -> Counter:
    toks = tuple(tokens)
    return Counter(toks[i : i + n] for i in range(len(toks) - n + 1))


def rouge_n(candidate: Sequence[str], target: Sequence[str], n: int = 1) -> PRF:
    """Clipped n-gram overlap; ``degenerate`` is set when either side has no n-grams."""
    if n not in (1, 2):
        raise ValueError(f"n must be 1 or 2, got {n}")
    cand = ngrams(candidate, n)
    tgt = ngrams(target, n)
    overlap = sum((cand & tgt).values())
    return _prf(overlap, sum(cand.values()), sum(tgt.values()))


def lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    if len(a) < len(b):
        a, b = b, a
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            cur.append(prev[j] + 1 if x == y else max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]


def rouge_l(candidate: Sequence[str], target: Sequence[str]) -> PRF:
    return _prf(lcs_length(candidate, target), len(candidate), len(target))


def _align(candidate, target, match_forms) -> dict[int, int]:
    """Leftmost-greedy one-to-one alignment, one pass per matching stage."""
    alignment: dict[int, int] = {}
    used: set[int] = set()
    for form in match_forms:
        cand_f = [form(t) for t in candidate]
        tgt_f = [form(t) for t in target]
        for i, c in enumerate(cand_f):
            if i in alignment:
                continue
            for j, t in enumerate(tgt_f):
                if j not in used and c == t:
                    alignment[i] = j
                    used.add(j)
                    break
    return alignment


def count_chunks(alignment: dict[int, int]) -> int:
    pairs = sorted(alignment.items())
    chunks = 0
    prev = None
    for i, j in pairs:
        if prev is None or i != prev[0] + 1 or j != prev[1] + 1:
            chunks += 1
        prev = (i, j)
    return chunks


def meteor_lite(candidate: Sequence[str], target: Sequence[str], stem_match: bool = False) -> PRF:
    """METEOR with exact (and optionally Porter-stem) matching only.

    Returns ``PRF(unigram_precision, unigram_recall, score)``; the score sits
    in the ``f1`` slot.
    """
    forms = [lambda t: t]
    if stem_match:
        forms.append(stem)
    alignment = _align(list(candidate), list(target), forms)
    m = len(alignment)
    degenerate = len(candidate) == 0 or len(target) == 0
    if m == 0:
        return PRF(0.0, 0.0, 0.0, degenerate)
    precision = m / len(candidate)
    recall = m / len(target)
    fmean = 10 * precision * recall / (recall + 9 * precision)
    penalty = 0.5 * (count_chunks(alignment) / m) ** 3
    return PRF(precision, recall, fmean * (1 - penalty), degenerate)


def g_score(candidate: Sequence[str], target: Sequence[str], metric: str = "rougeL_f1") -> float:
    """Single-number match score used by the decoder's lookahead."""
    if metric in ("rougeL", "rougeL_f1"):
        return rouge_l(candidate, target).f1
    if metric == "meteor":
        return meteor_lite(candidate, target).f1
    raise ValueError(f"unknown metric {metric!r}")


@dataclass
class MetricReport:
    scores: dict[str, PRF]
    target: str
    tokenizer: TokenizerOptions = DEFAULT_TOKENIZER

    @property
    def degenerate(self) -> bool:
        return any(s.degenerate for s in self.scores.values())

    def __getitem__(self, name: str) -> PRF:
        return self.scores[name]

    def f1_row(self) -> dict[str, float]:
        return {name: self.scores[name].f1 for name in METRIC_NAMES}


def score_tokens(candidate: Sequence[str], target: Sequence[str], stem_match: bool = False) -> dict[str, PRF]:
    return {
        "rouge1": rouge_n(candidate, target, 1),
        "rouge2": rouge_n(candidate, target, 2),
        "rougeL": rouge_l(candidate, target),
        "meteor": meteor_lite(candidate, target, stem_match),
    }


def score_instance(
    system: str,
    instance: CtrInstance,
    against: str = "highlights",
    options: TokenizerOptions = DEFAULT_TOKENIZER,
) -> MetricReport:
    if against == "highlights":
        target_text = concat_highlights(instance)
    elif against == "reference":
        if instance.reference is None:
            raise DatasetError(f"{instance.id}: no reference summary to score against")
        target_text = instance.reference
    else:
        raise ValueError(f"against must be 'highlights' or 'reference', got {against!r}")
    cand = tokenize(system, options).tokens
    tgt = tokenize(target_text, options).tokens
    return MetricReport(score_tokens(cand, tgt), against, options)


@dataclass(frozen=True)
class UnitAnnotation:
    tp: int
    fp: int
    fn: int
    id: str | None = field(default=None, compare=False)

    def __post_init__(self):
        if min(self.tp, self.fp, self.fn) < 0:
            raise ValueError(f"unit counts must be non-negative: {self}")


def micro_pr(annotations: Sequence[UnitAnnotation]) -> PRF:
    """Corpus-level precision/recall from pooled TP/FP/FN counts."""
    if not annotations:
        raise ValueError("micro_pr needs at least one annotation")
    tp = sum(a.tp for a in annotations)
    fp = sum(a.fp for a in annotations)
    fn = sum(a.fn for a in annotations)
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = f_measure(precision, recall)
    return PRF(precision, recall, f1, tp + fp == 0 or tp + fn == 0 or f1 == 0.0)


def load_annotations(path) -> list[UnitAnnotation]:
    out = []
    for lineno, line in iter_jsonl(path):
        obj = json.loads(line)
        try:
            out.append(UnitAnnotation(int(obj["tp"]), int(obj["fp"]), int(obj["fn"]), obj.get("id")))
        except (KeyError, TypeError, ValueError) as exc:
            raise DatasetError(f"{path}:{lineno}: bad annotation record: {exc}") from None
    return out
