"""Highlight-sensitive lookahead beam search.

Each expansion ``y_{<=t}`` of a beam hypothesis is scored as::

    f = log P(y_{<=t} | x) + lambda * g(y_{<=t} ++ greedy_l(y_{<=t}), x_h)

where ``greedy_l`` is a greedy continuation of at most ``l`` tokens, ``x_h`` is
the concatenated highlights and ``g`` is ROUGE-L F1 (or METEOR-lite).
"""

from __future__ import annotations

import itertools
import logging
import time
from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

from .corpus import DEFAULT_TOKENIZER, CtrInstance, TokenizerOptions, concat_highlights, tokenize
from .lm.base import LanguageModel, LMError, LmContext
from .metrics import METRIC_NAMES, g_score, score_instance

logger = logging.getLogger(__name__)

G_METRICS = ("rougeL_f1", "meteor")


class DecodeError(RuntimeError):
    pass


@dataclass(frozen=True)
class DecoderConfig:
    beam_size: int = 8
    lam: float = 1.0
    lookahead: int = 16
    g_metric: str = "rougeL_f1"
    max_output_tokens: int = 64
    length_normalize: bool = False
    top_k: int | None = None  # expansions per hypothesis; defaults to beam_size
    tokenizer: TokenizerOptions = DEFAULT_TOKENIZER

    def __post_init__(self):
        if self.beam_size < 1:
            raise ValueError("beam_size must be ≥ 1")
        if self.lookahead < 0:
            raise ValueError("lookahead must be ≥ 0")
        if self.lam < 0:
            raise ValueError("lambda must be ≥ 0")
        if self.g_metric == "rougeL":
            object.__setattr__(self, "g_metric", "rougeL_f1")
        if self.g_metric not in G_METRICS:
            raise ValueError(f"g_metric must be one of {G_METRICS}")
        if self.max_output_tokens < 1:
            raise ValueError("max_output_tokens must be ≥ 1")

    @property
    def expansions(self) -> int:
        return self.top_k or self.beam_size

    def as_dict(self) -> dict:
        d = asdict(self)
        d["tokenizer"] = self.tokenizer.as_dict()
        return d


@dataclass(frozen=True)
class Hypothesis:
    tokens: tuple[str, ...]
    logprob_sum: float
    lookahead_score: float
    score: float
    finished: bool = False
    n_scored: int = 0  # tokens whose logprob entered logprob_sum, EOS included

    def sort_key(self):
        # Best first: higher f, then higher logprob, then lexicographic tokens.
        return (-self.score, -self.logprob_sum, self.tokens)


def combined_score(logprob_sum: float, n_scored: int, lookahead_score: float, config: DecoderConfig) -> float:
    lp = logprob_sum / max(n_scored, 1) if config.length_normalize else logprob_sum
    return lp + config.lam * lookahead_score


def _target_tokens(instance_or_text, config: DecoderConfig) -> tuple[str, ...]:
    text = instance_or_text if isinstance(instance_or_text, str) else concat_highlights(instance_or_text)
    return tokenize(text, config.tokenizer).tokens


def _g(tokens: Sequence[str], target: Sequence[str], config: DecoderConfig) -> float:
    # Re-normalize generated tokens so stemming options apply on both sides.
    cand = tokenize(" ".join(tokens), config.tokenizer).tokens
    return g_score(cand, target, config.g_metric)


def score_candidate(
    model: LanguageModel,
    context: LmContext,
    hypothesis: Hypothesis,
    token: str,
    logprob: float,
    target: Sequence[str],
    config: DecoderConfig,
    rollout: tuple[str, ...] | None = None,
) -> Hypothesis:
    """Extend ``hypothesis`` by ``token`` and score it.

    ``rollout`` may be passed in when the caller batched the lookahead
    continuations; otherwise one greedy rollout of ``config.lookahead`` tokens
    is run here. With ``lam == 0`` or an end-of-sequence token no rollout is
    needed.
    """
    if hypothesis.finished:
        raise DecodeError("finished hypotheses cannot be extended")
    n_scored = hypothesis.n_scored + 1
    logprob_sum = hypothesis.logprob_sum + logprob
    if token == model.eos:
        tokens = hypothesis.tokens
        g = _g(tokens, target, config)
        finished = True
    else:
        tokens = hypothesis.tokens + (token,)
        if config.lam > 0 and rollout is None:
            rollout = model.greedy_rollout(context.extend(*tokens), config.lookahead)
        g = _g(tokens + (rollout or ()), target, config)
        finished = False
    return Hypothesis(tokens, logprob_sum, g, combined_score(logprob_sum, n_scored, g, config), finished, n_scored)


@dataclass
class DecodeResult:
    text: str
    best: Hypothesis
    trace: list[dict] = field(default_factory=list)

    @property
    def tokens(self) -> tuple[str, ...]:
        return self.best.tokens


def _trace_step(step: int, beam: Sequence[Hypothesis], rollouts: int) -> dict:
    return {
        "step": step,
        "beam": [
            {"tokens": list(h.tokens), "logprob": h.logprob_sum, "g": h.lookahead_score, "f": h.score, "finished": h.finished}
            for h in beam
        ],
        "rollouts": rollouts,
    }


def decode_text(model: LanguageModel, context: LmContext, highlights: str, config: DecoderConfig) -> DecodeResult:
    """Beam search for a given conditioning context and highlight target text."""
    target = _target_tokens(highlights, config)
    root = Hypothesis((), 0.0, 0.0, 0.0)
    beam = [root]
    trace: list[dict] = []
    for step in range(1, config.max_output_tokens + 1):
        candidates: list[Hypothesis] = [h for h in beam if h.finished]
        pending: list[tuple[Hypothesis, str, float]] = []
        for hyp in beam:
            if hyp.finished:
                continue
            dist = model.next_distribution(context.extend(*hyp.tokens), config.expansions)
            pending.extend((hyp, tok, lp) for tok, lp in dist.entries)
        if not pending and not candidates:
            raise DecodeError("no viable candidates (empty vocabulary)")
        # One greedy continuation per non-terminal candidate, fetched as a batch.
        needs_rollout = [(h, t) for h, t, _ in pending if t != model.eos and config.lam > 0]
        rollouts = model.batch_greedy_rollout(
            [context.extend(*h.tokens, t) for h, t in needs_rollout], config.lookahead
        ) if needs_rollout else []
        rollout_of = {(id(h), t): r for (h, t), r in zip(needs_rollout, rollouts)}
        for hyp, tok, lp in pending:
            candidates.append(
                score_candidate(model, context, hyp, tok, lp, target, config, rollout_of.get((id(hyp), tok), ()))
            )
        candidates.sort(key=Hypothesis.sort_key)
        beam = candidates[: config.beam_size]
        if step == config.max_output_tokens:
            beam = [replace(h, finished=True) for h in beam]
        trace.append(_trace_step(step, beam, len(needs_rollout)))
        if all(h.finished for h in beam):
            break
    best = min(beam, key=Hypothesis.sort_key)
    return DecodeResult(" ".join(best.tokens), best, trace)


def instance_context(instance: CtrInstance) -> LmContext:
    from .distill import mark_highlights

    return LmContext(mark_highlights(instance).text)


def decode(model: LanguageModel, instance: CtrInstance, config: DecoderConfig = DecoderConfig()) -> DecodeResult:
    return decode_text(model, instance_context(instance), concat_highlights(instance), config)


SWEEP_COLUMNS = ("k", "lambda", "l", "g_metric", "rouge1_f1", "rouge2_f1", "rougeL_f1", "meteor", "runtime_ms")


@dataclass
class SweepRow:
    config: DecoderConfig
    means: dict[str, float] | None
    runtime_ms: float
    failures: list[tuple[str, str]] = field(default_factory=list)

    def cells(self) -> list[str]:
        c = self.config
        head = [str(c.beam_size), repr(float(c.lam)), str(c.lookahead), c.g_metric]
        if self.means is None:
            vals = ["failed"] * len(METRIC_NAMES)
        else:
            vals = [f"{self.means[m]:.6f}" for m in METRIC_NAMES]
        return head + vals + [f"{self.runtime_ms:.1f}"]


def decode_dataset(model, dataset, config: DecoderConfig):
    """Decode every instance; per-instance failures are collected, not raised."""
    outputs: dict[str, str] = {}
    failures: list[tuple[str, str]] = []
    for inst in dataset:
        try:
            outputs[inst.id] = decode(model, inst, config).text
        except (LMError, DecodeError) as exc:
            logger.warning("decode failed for %s: %s", inst.id, exc)
            failures.append((inst.id, str(exc)))
    return outputs, failures


def sweep(
    model: LanguageModel,
    dataset: Sequence[CtrInstance],
    beams: Sequence[int] = (8,),
    lambdas: Sequence[float] = (1.0,),
    lookaheads: Sequence[int] = (16,),
    g_metrics: Sequence[str] = ("rougeL_f1",),
    base: DecoderConfig = DecoderConfig(),
) -> list[SweepRow]:
    """Full-factorial grid of decodes, each scored against the highlights."""
    grid = list(itertools.product(beams, lambdas, lookaheads, g_metrics))
    if not grid:
        raise ValueError("sweep grid is empty")
    rows = []
    for k, lam, l, g in grid:
        config = replace(base, beam_size=k, lam=lam, lookahead=l, g_metric=g)
        t0 = time.perf_counter()
        outputs, failures = decode_dataset(model, dataset, config)
        means = None
        if outputs:
            sums = dict.fromkeys(METRIC_NAMES, 0.0)
            for inst in dataset:
                if inst.id in outputs:
                    row = score_instance(outputs[inst.id], inst, "highlights", config.tokenizer).f1_row()
                    for m in METRIC_NAMES:
                        sums[m] += row[m]
            means = {m: v / len(outputs) for m, v in sums.items()}
        rows.append(SweepRow(config, means, (time.perf_counter() - t0) * 1000, failures))
    return rows
