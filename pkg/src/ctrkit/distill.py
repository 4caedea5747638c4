"""Distillation prompt construction, a minimal completion client, and
highlight-alignment audits of generated data."""

from __future__ import annotations

import json
import logging
import os
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Sequence

from .corpus import (
    DEFAULT_TOKENIZER,
    HIGHLIGHT_END,
    HIGHLIGHT_START,
    CtrInstance,
    TokenizerOptions,
    concat_highlights,
    highlight_texts,
    make_instance,
    normalize_spans,
    strip_markers,
    tokenize,
)
from .lm.remote import post_json
from .metrics import rouge_l

logger = logging.getLogger(__name__)

ANSWER_MARKER = "So, the answer is:"
LIST_LEADIN = "Answer: The highlighted spans are:"
COMBINE_LEADIN = "The highlights spans are combined as follows:"

ENV_GEN_URL = "CTR_GEN_URL"
ENV_GEN_KEY = "CTR_GEN_KEY"

_MARKED_RE = re.compile(re.escape(HIGHLIGHT_START) + r"(.*?)" + re.escape(HIGHLIGHT_END), re.S)


@dataclass(frozen=True)
class MarkedDocument:
    text: str

    def strip(self) -> str:
        return strip_markers(self.text)

    def spans(self) -> list[str]:
        return _MARKED_RE.findall(self.text)


def mark_highlights(instance: CtrInstance) -> MarkedDocument:
    text = instance.document
    for start, end in reversed(normalize_spans(instance.highlights)):
        text = text[:start] + HIGHLIGHT_START + text[start:end] + HIGHLIGHT_END + text[end:]
    return MarkedDocument(text)


@dataclass(frozen=True)
class Exemplar:
    passage: str  # marked passage
    consolidation: tuple[str, ...]
    answer: str

    @property
    def highlights(self) -> list[str]:
        return [s.strip() for s in MarkedDocument(self.passage).spans()]


@dataclass(frozen=True)
class PromptConfig:
    variant: str = "modular"
    exemplar_count: int = 2
    list_highlights: bool = True
    exemplar_path: str | None = None
    instructions_path: str | None = None

    def __post_init__(self):
        if self.variant not in ("modular", "regular"):
            raise ValueError("variant must be 'modular' or 'regular'")
        if self.exemplar_count < 1:
            raise ValueError("exemplar_count must be ≥ 1")

    def as_dict(self) -> dict:
        return {
            "variant": self.variant,
            "exemplar_count": self.exemplar_count,
            "list_highlights": self.list_highlights,
            "exemplar_path": self.exemplar_path,
            "instructions_path": self.instructions_path,
        }


def _read_resource(path: str | None, default_name: str) -> str:
    if path is not None:
        return Path(path).read_text(encoding="utf-8")
    return resources.files("ctrkit.prompts").joinpath(default_name).read_text(encoding="utf-8")


def load_exemplars(path: str | None = None) -> list[Exemplar]:
    raw = json.loads(_read_resource(path, "exemplars.json"))
    out = []
    for i, ex in enumerate(raw["exemplars"], 1):
        try:
            exemplar = Exemplar(ex["passage"], tuple(ex["consolidation"]), ex["answer"])
        except (KeyError, TypeError) as exc:
            raise ValueError(f"exemplar {i} is malformed: {exc}") from None
        if not exemplar.highlights or not exemplar.answer.strip():
            raise ValueError(f"exemplar {i} needs at least one marked span and an answer")
        out.append(exemplar)
    return out


def load_instructions(path: str | None = None) -> str:
    return _read_resource(path, "instructions.txt").strip()


def _numbered(spans: Sequence[str]) -> list[str]:
    return [f" {i}. {s}" for i, s in enumerate(spans, 1)]


def _exemplar_block(n: int, ex: Exemplar, variant: str) -> list[str]:
    lines = [f"Example{n}:", f"Passage: {ex.passage}", ""]
    if variant == "modular":
        lines.append(LIST_LEADIN)
        lines.extend(_numbered(ex.highlights))
        lines.append(COMBINE_LEADIN)
        lines.extend(ex.consolidation)
        lines.append(ANSWER_MARKER)
        lines.append(ex.answer)
    else:
        lines.append("Answer:")
        lines.append(ex.answer)
    lines.append("")
    return lines


def build_prompt(instance: CtrInstance, config: PromptConfig = PromptConfig()) -> str:
    """Instructions, worked exemplars, then the marked instance.

    With ``list_highlights`` (modular variant only) the instance's highlight
    list is already filled in, so the model starts at the consolidation step.
    """
    exemplars = load_exemplars(config.exemplar_path)
    if len(exemplars) < config.exemplar_count:
        raise ValueError(f"need {config.exemplar_count} exemplars, file provides {len(exemplars)}")
    lines = [load_instructions(config.instructions_path), ""]
    for n, ex in enumerate(exemplars[: config.exemplar_count], 1):
        lines.extend(_exemplar_block(n, ex, config.variant))
    lines.append("Now your turn:")
    lines.append(f"Passage: {mark_highlights(instance).text}")
    lines.append("")
    if config.variant == "modular" and config.list_highlights:
        lines.append(LIST_LEADIN)
        lines.extend(_numbered(highlight_texts(instance)))
        lines.append(COMBINE_LEADIN)
    else:
        lines.append("Answer:")
    return "\n".join(lines) + "\n"


class CompletionClient:
    """POSTs ``{"prompt", "temperature", "max_tokens"}`` and reads ``{"text"}``."""

    def __init__(self, url: str, key: str | None = None, attempts: int = 3, timeout: float = 120.0):
        self.url = url
        self.key = key
        self.attempts = attempts
        self.timeout = timeout

    @classmethod
    def from_env(cls, **kwargs) -> "CompletionClient":
        url = os.environ.get(ENV_GEN_URL)
        if not url:
            raise RuntimeError(f"{ENV_GEN_URL} is not set")
        return cls(url, os.environ.get(ENV_GEN_KEY), **kwargs)

    def complete(self, prompt: str, temperature: float = 0.0, max_tokens: int = 512, seed: int | None = None) -> str:
        body = {"prompt": prompt, "temperature": temperature, "max_tokens": max_tokens}
        if seed is not None:
            body["seed"] = seed
        headers = {"Authorization": f"Bearer {self.key}"} if self.key else None
        reply = post_json(self.url, body, self.attempts, self.timeout, headers=headers)
        if not isinstance(reply.get("text"), str):
            raise RuntimeError("completion reply lacks a 'text' string")
        return reply["text"]


@dataclass
class Generation:
    text: str
    raw: str
    flagged: bool
    prompt: str = ""


def extract_answer(completion: str, variant: str = "modular") -> tuple[str, bool]:
    """Final reduction and a flag set when the answer marker is missing."""
    if variant == "regular":
        return completion.strip(), False
    idx = completion.rfind(ANSWER_MARKER)
    if idx < 0:
        return "", True
    return completion[idx + len(ANSWER_MARKER) :].strip(), False


def generate_summary(
    client: CompletionClient,
    prompt: str,
    temperature: float = 0.0,
    max_tokens: int = 512,
    seed: int | None = None,
    variant: str = "modular",
) -> Generation:
    raw = client.complete(prompt, temperature, max_tokens, seed)
    text, flagged = extract_answer(raw, variant)
    if flagged:
        logger.warning("completion has no %r line; raw text kept for audit", ANSWER_MARKER)
    return Generation(text, raw, flagged, prompt)


def generate_dataset(
    client: CompletionClient,
    instances: Sequence[CtrInstance],
    config: PromptConfig = PromptConfig(),
    temperature: float = 0.0,
    max_tokens: int = 512,
    seed: int | None = None,
    parallelism: int = 2,
) -> list[Generation]:
    """One generation per instance, in input order."""

    def run(inst):
        return generate_summary(client, build_prompt(inst, config), temperature, max_tokens, seed, config.variant)

    with ThreadPoolExecutor(parallelism) as pool:
        return list(pool.map(run, instances))


def audit_alignment(
    document: str,
    gold_highlights,
    candidate_highlights,
    options: TokenizerOptions = DEFAULT_TOKENIZER,
) -> float:
    """ROUGE-L F1 between the concatenations of two highlight sets over one document."""
    gold = concat_highlights(make_instance("gold", document, gold_highlights))
    cand = concat_highlights(make_instance("candidate", document, candidate_highlights))
    return rouge_l(tokenize(cand, options).tokens, tokenize(gold, options).tokens).f1


def audit_dataset(
    gold: Sequence[CtrInstance],
    candidate: Sequence[CtrInstance],
    options: TokenizerOptions = DEFAULT_TOKENIZER,
) -> tuple[float, dict[str, float]]:
    """Mean alignment over ids present in both sets, plus per-id scores."""
    cand_by_id = {c.id: c for c in candidate}
    scores = {}
    for g in gold:
        c = cand_by_id.get(g.id)
        if c is None:
            continue
        if c.document != g.document:
            raise ValueError(f"{g.id}: gold and candidate documents differ")
        scores[g.id] = audit_alignment(g.document, g.highlights, c.highlights, options)
    if not scores:
        raise ValueError("gold and candidate sets share no ids")
    return sum(scores.values()) / len(scores), scores


@dataclass
class FilterResult:
    kept: list[tuple[CtrInstance, str, float]] = field(default_factory=list)
    rejected: list[tuple[CtrInstance, str, float]] = field(default_factory=list)


def filter_generated(
    pairs: Sequence[tuple[CtrInstance, str]],
    threshold: float,
    options: TokenizerOptions = DEFAULT_TOKENIZER,
) -> FilterResult:
    """Keep generated summaries whose ROUGE-L F1 against the highlights reaches ``threshold``."""
    if not 0.0 <= threshold <= 1.0:
        raise ValueError("threshold must lie in [0, 1]")
    result = FilterResult()
    for inst, summary in pairs:
        score = rouge_l(tokenize(summary, options).tokens, tokenize(concat_highlights(inst), options).tokens).f1
        (result.kept if score >= threshold else result.rejected).append((inst, summary, score))
    return result
