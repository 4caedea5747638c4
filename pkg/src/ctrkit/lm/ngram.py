"""Add-k smoothed n-gram language model with backoff to shorter histories.

An optional *source* component mixes in a small n-gram model fitted on the
conditioning text itself, which makes a single trained model behave like a
per-document copy model. This is what lets a word-level n-gram stand in
for a conditional generator at desk scale.
"""

from __future__ import annotations

import re
from collections import Counter, defaultdict
from typing import Sequence

from ..corpus import DEFAULT_TOKENIZER, TokenizerOptions, strip_markers, tokenize
from .base import BOS, EOS, LanguageModel, LmContext, NextTokenDistribution


_SENTENCE_END = re.compile(r"(?<=[.!?])\s+")


def split_sentences(text: str) -> list[str]:
    """Crude split after ``.``, ``!`` or ``?`` followed by whitespace."""
    return [s for s in _SENTENCE_END.split(text) if s.strip()]


class CountTable:
    """Counts of ``history -> next token`` for every history length below ``order``."""

    def __init__(self, order: int):
        self.order = order
        self.counts: list[dict[tuple, Counter]] = [defaultdict(Counter) for _ in range(order)]

    def add_sequence(self, tokens: Sequence[str]) -> None:
        padded = [BOS] * (self.order - 1) + list(tokens) + [EOS]
        for pos in range(self.order - 1, len(padded)):
            nxt = padded[pos]
            for h in range(self.order):
                self.counts[h][tuple(padded[pos - h : pos])][nxt] += 1

    def history(self, prefix: Sequence[str]) -> tuple[str, ...]:
        if self.order == 1:
            return ()
        padded = [BOS] * (self.order - 1) + list(prefix)
        return tuple(padded[len(padded) - (self.order - 1) :])

    def lookup(self, history: tuple[str, ...]) -> tuple[Counter, int]:
        """Counter for the longest seen suffix of ``history`` and its total."""
        for h in range(len(history), -1, -1):
            suffix = history[len(history) - h :] if h else ()
            table = self.counts[h].get(suffix)
            if table:
                return table, sum(table.values())
        return Counter(), 0

    def vocabulary(self) -> set[str]:
        return set(self.counts[0].get((), Counter()))


def add_k_probs(table: Counter, total: int, vocab: Sequence[str], k: float) -> dict[str, float]:
    denom = total + k * len(vocab)
    return {w: (table.get(w, 0) + k) / denom for w in vocab}


class NGramLM(LanguageModel):
    def __init__(
        self,
        table: CountTable,
        k: float = 1.0,
        options: TokenizerOptions = DEFAULT_TOKENIZER,
        source_weight: float = 0.0,
        sentence_level: bool = False,
    ):
        if k <= 0:
            raise ValueError("smoothing constant k must be > 0")
        if not 0.0 <= source_weight <= 1.0:
            raise ValueError("source_weight must lie in [0, 1]")
        self.table = table
        self.order = table.order
        self.k = k
        self.options = options
        self.source_weight = source_weight
        self.sentence_level = sentence_level
        self.vocab = sorted(table.vocabulary() | {EOS})
        self._vocab_set = frozenset(self.vocab)
        self._sources: dict[str, tuple[CountTable, list[str]]] = {}
        self._cache: dict[tuple, dict[str, float]] = {}

    def config(self) -> dict:
        return {
            "order": self.order,
            "k": self.k,
            "source_weight": self.source_weight,
            "sentence_level": self.sentence_level,
            "vocab_size": len(self.vocab),
        }

    def _units(self, text: str) -> list[str]:
        return split_sentences(text) if self.sentence_level else [text]

    def _source(self, text: str):
        if text not in self._sources:
            src = CountTable(self.order)
            seen: set[str] = set()
            for unit in self._units(strip_markers(text)):
                tokens = tokenize(unit, self.options).tokens
                src.add_sequence(tokens)
                seen.update(tokens)
            vocab = sorted(self._vocab_set | seen)
            self._sources[text] = (src, vocab)
        return self._sources[text]

    def probabilities(self, context: LmContext) -> dict[str, float]:
        history = self.table.history(context.prefix)
        use_source = self.source_weight > 0 and context.text != ""
        key = (context.text if use_source else "", history)
        cached = self._cache.get(key)
        if cached is not None:
            return cached
        table, total = self.table.lookup(history)
        probs = add_k_probs(table, total, self.vocab, self.k)
        if use_source:
            src, vocab = self._source(context.text)
            s_table, s_total = src.lookup(history)
            s_probs = add_k_probs(s_table, s_total, vocab, self.k)
            w = self.source_weight
            probs = {tok: (1 - w) * probs.get(tok, 0.0) + w * s_probs[tok] for tok in vocab}
        self._cache[key] = probs
        return probs

    def next_distribution(self, context: LmContext, top_k: int | None = None) -> NextTokenDistribution:
        return NextTokenDistribution.from_probs(self.probabilities(context), top_k)


def train_ngram(
    corpus: Sequence[str],
    order: int = 2,
    k: float = 1.0,
    options: TokenizerOptions = DEFAULT_TOKENIZER,
    source_weight: float = 0.0,
    sentence_level: bool = False,
) -> NGramLM:
    """Fit an add-k n-gram model.

    Every training unit contributes one end-of-sequence event; a unit is a
    whole text, or one sentence when ``sentence_level`` is set (which also
    applies to the per-document source component).
    """
    if order not in (1, 2, 3):
        raise ValueError(f"order must be 1, 2 or 3, got {order}")
    if not corpus:
        raise ValueError("cannot train on an empty corpus")
    table = CountTable(order)
    for text in corpus:
        for unit in split_sentences(text) if sentence_level else [text]:
            table.add_sequence(tokenize(unit, options).tokens)
    return NGramLM(table, k, options, source_weight, sentence_level)
