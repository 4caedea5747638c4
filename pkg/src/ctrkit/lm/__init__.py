"""Pluggable language models: n-gram, scripted and remote."""

from .base import (
    BOS,
    EOS,
    LanguageModel,
    LMError,
    LmContext,
    NextTokenDistribution,
    greedy_rollout,
    next_distribution,
    reward_token,
    sample,
)
from .ngram import NGramLM, train_ngram
from .remote import RemoteLM, serve_model
from .scripted import ScriptedLM

__all__ = [
    "BOS",
    "EOS",
    "LMError",
    "LanguageModel",
    "LmContext",
    "NGramLM",
    "NextTokenDistribution",
    "RemoteLM",
    "ScriptedLM",
    "greedy_rollout",
    "next_distribution",
    "reward_token",
    "sample",
    "serve_model",
    "train_ngram",
]
