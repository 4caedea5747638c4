from __future__ import annotations

from typing import Mapping, Sequence

from .base import EOS, LanguageModel, LmContext, NextTokenDistribution


class ScriptedLM(LanguageModel):
    """Deterministic table-driven model for tests and worked examples.

    ``table`` maps a space-joined prefix (``""`` for the empty prefix) to a
    list of ``(token, probability)`` pairs. The key ``"*"`` is the fallback
    for any prefix not listed; without it an unlisted prefix ends the
    sequence.
    """

    def __init__(self, table: Mapping[str, Sequence[tuple[str, float]]]):
        self.table = {key: [(tok, float(p)) for tok, p in entries] for key, entries in table.items()}

    def next_distribution(self, context: LmContext, top_k: int | None = None) -> NextTokenDistribution:
        key = " ".join(context.prefix)
        entries = self.table.get(key, self.table.get("*", [(EOS, 1.0)]))
        return NextTokenDistribution.from_probs(entries, top_k)
