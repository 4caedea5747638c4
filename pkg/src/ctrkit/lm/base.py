from __future__ import annotations

import math
import re
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

EOS = "</s>"
BOS = "<s>"

REWARD_TOKEN_RE = re.compile(r"^<RWD_[1-9][0-9]*>$")


class LMError(RuntimeError):
    """A model could not produce a distribution (transport failure, empty vocabulary, ...)."""


def reward_token(i: int) -> str:
    return f"<RWD_{i}>"


@dataclass(frozen=True)
class LmContext:
    """What a model conditions on: source text, generated prefix and an
    optional reward-quantile control token."""

    text: str = ""
    prefix: tuple[str, ...] = ()
    control: str | None = None

    def __post_init__(self):
        if self.control is not None and not REWARD_TOKEN_RE.match(self.control):
            raise ValueError(f"control token {self.control!r} is not a registered reward token")
        if not isinstance(self.prefix, tuple):
            object.__setattr__(self, "prefix", tuple(self.prefix))

    def extend(self, *tokens: str) -> "LmContext":
        return LmContext(self.text, self.prefix + tokens, self.control)


@dataclass(frozen=True)
class NextTokenDistribution:
    entries: tuple[tuple[str, float], ...]
    truncated: bool = False

    @classmethod
    def from_probs(cls, probs: dict[str, float] | Iterable[tuple[str, float]], top_k: int | None = None):
        """Build a sorted distribution from probabilities, dropping zeros."""
        items = probs.items() if isinstance(probs, dict) else probs
        entries = [(tok, math.log(p)) for tok, p in items if p > 0]
        return cls.from_logprobs(entries, top_k)

    @classmethod
    def from_logprobs(cls, entries: Iterable[tuple[str, float]], top_k: int | None = None):
        ordered = sorted(entries, key=lambda e: (-e[1], e[0]))
        if not ordered:
            raise LMError("model vocabulary is empty")
        if top_k is not None:
            if top_k < 1:
                raise ValueError(f"top_k must be ≥ 1, got {top_k}")
            truncated = top_k < len(ordered)
            ordered = ordered[:top_k]
        else:
            truncated = False
        return cls(tuple(ordered), truncated)

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    @property
    def tokens(self) -> list[str]:
        return [tok for tok, _ in self.entries]

    def argmax(self) -> str:
        return self.entries[0][0]

    def as_dict(self) -> dict[str, float]:
        return dict(self.entries)

    def probs(self) -> dict[str, float]:
        return {tok: math.exp(lp) for tok, lp in self.entries}

    def logprob(self, token: str) -> float:
        for tok, lp in self.entries:
            if tok == token:
                return lp
        return -math.inf


class LanguageModel(ABC):
    """Word-level next-token model.

    Subclasses implement :meth:`next_distribution`; rollouts and sampling are
    derived from it unless a subclass can do them more cheaply (the remote
    client does them server-side).
    """

    eos = EOS

    @abstractmethod
    def next_distribution(self, context: LmContext, top_k: int | None = None) -> NextTokenDistribution:
        """Next-token candidates, best first. ``top_k=None`` returns the full
        distribution."""

    def greedy_rollout(self, context: LmContext, max_tokens: int) -> tuple[str, ...]:
        if max_tokens < 0:
            raise ValueError("max_tokens must be ≥ 0")
        out: list[str] = []
        while len(out) < max_tokens:
            tok = self.next_distribution(context.extend(*out), top_k=1).argmax()
            if tok == self.eos:
                break
            out.append(tok)
        return tuple(out)

    def batch_greedy_rollout(self, contexts: Sequence[LmContext], max_tokens: int) -> list[tuple[str, ...]]:
        return [self.greedy_rollout(ctx, max_tokens) for ctx in contexts]

    def sample(self, context: LmContext, temperature: float = 1.0, seed: int = 0, max_tokens: int = 32) -> tuple[str, ...]:
        """Ancestral sampling.

        Logprobs are divided by ``temperature`` before renormalizing, so as
        the temperature goes to zero this converges to :meth:`greedy_rollout`
        (except where the top two tokens tie exactly).
        """
        if temperature <= 0:
            raise ValueError("temperature must be > 0")
        rng = np.random.default_rng(seed)
        out: list[str] = []
        while len(out) < max_tokens:
            dist = self.next_distribution(context.extend(*out))
            tok = draw(dist, temperature, rng.random())
            if tok == self.eos:
                break
            out.append(tok)
        return tuple(out)


def draw(dist: NextTokenDistribution, temperature: float, u: float) -> str:
    """Inverse-CDF draw from a tempered distribution using uniform ``u``."""
    scaled = np.array([lp for _, lp in dist.entries]) / temperature
    weights = np.exp(scaled - scaled.max())
    cdf = np.cumsum(weights)
    idx = int(np.searchsorted(cdf, u * cdf[-1], side="right"))
    return dist.entries[min(idx, len(dist.entries) - 1)][0]


def next_distribution(model: LanguageModel, context: LmContext, top_k: int | None = None) -> NextTokenDistribution:
    return model.next_distribution(context, top_k)


def greedy_rollout(model: LanguageModel, context: LmContext, max_tokens: int) -> tuple[str, ...]:
    return model.greedy_rollout(context, max_tokens)


def sample(model: LanguageModel, context: LmContext, temperature: float = 1.0, seed: int = 0, max_tokens: int = 32):
    return model.sample(context, temperature, seed, max_tokens)
