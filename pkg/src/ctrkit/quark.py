"""Reward-quantized unlearning loop (exploration, quantization, learning).

Gradient training is out of reach here, so learning goes through a learner
hook. :class:`CountLearner` is the bundled toy learner: it fits n-gram count
tables per (reward token, input) from the pool and interpolates them with
the base model.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import Protocol, Sequence

import numpy as np

from .corpus import DEFAULT_TOKENIZER, CtrInstance, TokenizerOptions, concat_highlights, tokenize
from .decoder import instance_context
from .lm.base import EOS, LanguageModel, LmContext, NextTokenDistribution, reward_token
from .lm.ngram import CountTable
from .metrics import rouge_l, rouge_n, meteor_lite


class RewardKind(str, Enum):
    PRECISION = "rougeL_precision"
    RECALL = "rougeL_recall"
    F1 = "rougeL_f1"


class Schedule(str, Enum):
    ALTERNATE_PR = "alternate_PR"
    P_PLUS_F1 = "P_plus_F1"
    R_PLUS_F1 = "R_plus_F1"
    F1_ONLY = "F1_only"


# Member used on even iterations first, odd iterations second.
_SCHEDULES = {
    Schedule.ALTERNATE_PR: (RewardKind.RECALL, RewardKind.PRECISION),
    Schedule.P_PLUS_F1: (RewardKind.PRECISION, RewardKind.F1),
    Schedule.R_PLUS_F1: (RewardKind.RECALL, RewardKind.F1),
    Schedule.F1_ONLY: (RewardKind.F1, RewardKind.F1),
}

CLI_SCHEDULES = {
    "alternate-pr": Schedule.ALTERNATE_PR,
    "p-f1": Schedule.P_PLUS_F1,
    "r-f1": Schedule.R_PLUS_F1,
    "f1": Schedule.F1_ONLY,
}


@dataclass(frozen=True)
class RewardFunction:
    kind: RewardKind
    options: TokenizerOptions = DEFAULT_TOKENIZER

    def __call__(self, output: str, highlights: str) -> float:
        prf = rouge_l(tokenize(output, self.options).tokens, tokenize(highlights, self.options).tokens)
        if self.kind is RewardKind.PRECISION:
            return prf.precision
        if self.kind is RewardKind.RECALL:
            return prf.recall
        return prf.f1


def current_reward(schedule: Schedule | str, iteration: int, options: TokenizerOptions = DEFAULT_TOKENIZER) -> RewardFunction:
    pair = _SCHEDULES[Schedule(schedule)]
    return RewardFunction(pair[iteration % 2], options)


@dataclass(frozen=True)
class QuarkConfig:
    quantiles: int = 8
    samples_per_instance: int = 4
    temperature: float = 1.0
    kl_coefficient: float = 1.0
    iterations: int = 5
    schedule: Schedule = Schedule.ALTERNATE_PR
    max_tokens: int = 32
    tokenizer: TokenizerOptions = DEFAULT_TOKENIZER

    def __post_init__(self):
        object.__setattr__(self, "schedule", Schedule(self.schedule))
        if self.quantiles < 2:
            raise ValueError("quantiles must be ≥ 2")
        if self.iterations < 1:
            raise ValueError("iterations must be ≥ 1")
        if self.temperature <= 0:
            raise ValueError("temperature must be > 0")
        if self.kl_coefficient < 0:
            raise ValueError("kl_coefficient must be ≥ 0")

    def as_dict(self) -> dict:
        d = asdict(self)
        d["schedule"] = self.schedule.value
        d["tokenizer"] = self.tokenizer.as_dict()
        return d


@dataclass
class RewardedSample:
    id: str
    output: str
    reward: float
    reward_kind: RewardKind
    iteration: int
    reward_token: str | None = None
    context: str = ""

    def export(self) -> dict:
        return {
            "id": self.id,
            "output": self.output,
            "reward": self.reward,
            "reward_token": self.reward_token,
            "iteration": self.iteration,
        }


def derive_seed(*parts: int) -> int:
    """Independent 32-bit seed for a tuple of indices (root seed first)."""
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])


TOP_TOKEN = reward_token(1)


def explore(
    policy: LanguageModel,
    dataset: Sequence[CtrInstance],
    config: QuarkConfig,
    iteration: int,
    seed: int,
    reward: RewardFunction | None = None,
) -> list[RewardedSample]:
    """Draw ``samples_per_instance`` outputs per instance and score them.

    From the second iteration on, sampling is conditioned on the top reward
    token, i.e. the policy is asked for high-reward outputs.
    """
    reward = reward or current_reward(config.schedule, iteration, config.tokenizer)
    control = TOP_TOKEN if iteration > 0 else None
    fresh = []
    for idx, inst in enumerate(dataset):
        ctx = LmContext(instance_context(inst).text, (), control)
        target = concat_highlights(inst)
        for j in range(config.samples_per_instance):
            tokens = policy.sample(ctx, config.temperature, derive_seed(seed, iteration, idx, j), config.max_tokens)
            text = " ".join(tokens)
            fresh.append(RewardedSample(inst.id, text, reward(text, target), reward.kind, iteration, None, ctx.text))
    return fresh


def rescore(pool: list[RewardedSample], dataset: Sequence[CtrInstance], reward: RewardFunction) -> None:
    """Recompute stale rewards in place after a reward-function switch."""
    targets = {inst.id: concat_highlights(inst) for inst in dataset}
    for s in pool:
        if s.reward_kind is not reward.kind:
            s.reward = reward(s.output, targets[s.id])
            s.reward_kind = reward.kind


@dataclass(frozen=True)
class QuantileGroup:
    token: str
    size: int
    max_reward: float
    min_reward: float


def quantile_sizes(n: int, k: int) -> list[int]:
    q, r = divmod(n, k)
    return [q + 1 if i < r else q for i in range(k)]


def quantize(pool: Sequence[RewardedSample], k: int = 8) -> tuple[list[RewardedSample], list[QuantileGroup]]:
    """Sort by reward (stable, descending) and cut into ``k`` near-equal groups.

    Labels are written onto the samples; ``<RWD_1>`` is the best group.
    """
    if len(pool) < k:
        raise ValueError(f"pool of {len(pool)} samples is smaller than the {k} quantiles")
    ranked = sorted(pool, key=lambda s: -s.reward)
    groups = []
    start = 0
    for i, size in enumerate(quantile_sizes(len(ranked), k), 1):
        token = reward_token(i)
        members = ranked[start : start + size]
        for s in members:
            s.reward_token = token
        groups.append(QuantileGroup(token, size, members[0].reward, members[-1].reward))
        start += size
    return ranked, groups


def kl_penalty(policy_dist: NextTokenDistribution, base_dist: NextTokenDistribution) -> float:
    """KL(policy || base) in nats. Tokens absent from a distribution have
    probability zero; ``0 * log(0/q)`` counts as zero."""
    if policy_dist.truncated or base_dist.truncated:
        raise ValueError("KL needs untruncated distributions")
    q = base_dist.as_dict()
    total = 0.0
    for tok, lp in policy_dist.entries:
        if tok not in q:
            raise ValueError(f"support mismatch: {tok!r} has policy mass but no base mass")
        total += math.exp(lp) * (lp - q[tok])
    return max(total, 0.0)


class Learner(Protocol):
    def fit(self, pool: Sequence[RewardedSample], base_policy: LanguageModel, config: QuarkConfig) -> LanguageModel: ...


class QuarkPolicy(LanguageModel):
    """Base model plus reward-token-conditioned count tables.

    For a context with control token ``r`` and input ``x`` whose table was
    seen in the pool, the next-token distribution is::

        (n * P_pool(w | h) + beta * P_base(w | h, x)) / (n + beta)

    where ``h`` is the longest pool-seen history suffix and ``n`` its count.
    ``beta = 0`` gives the pool's maximum-likelihood estimate; ``beta = inf``
    returns the base model unchanged.
    """

    def __init__(self, base: LanguageModel, tables: dict[tuple[str, str], CountTable], beta: float):
        self.base = base
        self.tables = tables
        self.beta = beta
        self.eos = base.eos

    def next_distribution(self, context: LmContext, top_k: int | None = None) -> NextTokenDistribution:
        base_ctx = LmContext(context.text, context.prefix)
        base = self.base.next_distribution(base_ctx)
        table = self.tables.get((context.control, context.text)) if context.control else None
        if table is None or math.isinf(self.beta):
            return base if top_k is None else NextTokenDistribution.from_logprobs(base.entries, top_k)
        counts, n = table.lookup(table.history(context.prefix))
        if n == 0:
            return base if top_k is None else NextTokenDistribution.from_logprobs(base.entries, top_k)
        base_p = base.probs()
        vocab = set(base_p) | set(counts)
        probs = {w: (counts.get(w, 0) + self.beta * base_p.get(w, 0.0)) / (n + self.beta) for w in vocab}
        return NextTokenDistribution.from_probs(probs, top_k)


class CountLearner:
    """Toy learner: refits per-(reward token, input) n-gram tables from the pool."""

    def __init__(self, order: int = 4):
        self.order = order

    def fit(self, pool: Sequence[RewardedSample], base_policy: LanguageModel, config: QuarkConfig) -> QuarkPolicy:
        tables: dict[tuple[str, str], CountTable] = {}
        for s in pool:
            if s.reward_token is None:
                raise ValueError("pool must be quantized before learning")
            key = (s.reward_token, s.context)
            if key not in tables:
                tables[key] = CountTable(self.order)
            tables[key].add_sequence(s.output.split() if s.output else [])
        return QuarkPolicy(base_policy, tables, config.kl_coefficient)


def learn(learner: Learner, pool: Sequence[RewardedSample], base_policy: LanguageModel, config: QuarkConfig) -> LanguageModel:
    return learner.fit(pool, base_policy, config)


REPORT_COLUMNS = ("iteration", "reward_kind", "pool_size", "mean_top_reward", "mean_kl", "q1_min", "qK_max")


@dataclass
class IterationRow:
    iteration: int
    reward_kind: str
    pool_size: int
    mean_top_reward: float
    mean_kl: float
    q1_min: float
    qK_max: float

    def cells(self) -> list[str]:
        return [
            str(self.iteration),
            self.reward_kind,
            str(self.pool_size),
            f"{self.mean_top_reward:.6f}",
            f"{self.mean_kl:.6f}",
            f"{self.q1_min:.6f}",
            f"{self.qK_max:.6f}",
        ]


@dataclass
class LoopReport:
    config: QuarkConfig
    seed: int
    baseline_reward: float
    rows: list[IterationRow] = field(default_factory=list)
    pool: list[RewardedSample] = field(default_factory=list)
    eval_samples: dict[int, list[tuple[str, str]]] = field(default_factory=dict)

    def reward_at(self, iteration: int) -> float:
        """Mean top-token reward after ``iteration`` cycles (0 = initial policy)."""
        if iteration == 0:
            return self.baseline_reward
        return self.rows[iteration - 1].mean_top_reward


def evaluate_policy(
    policy: LanguageModel,
    base: LanguageModel,
    dataset: Sequence[CtrInstance],
    config: QuarkConfig,
    seed: int,
    control: str | None,
) -> tuple[float, float, list[tuple[str, str]]]:
    """Mean ROUGE-L F1 (vs highlights) of fresh samples and the mean
    per-position KL to the base model along them."""
    scorer = RewardFunction(RewardKind.F1, config.tokenizer)
    rewards, kls, outputs = [], [], []
    for idx, inst in enumerate(dataset):
        ctx = LmContext(instance_context(inst).text, (), control)
        target = concat_highlights(inst)
        for j in range(config.samples_per_instance):
            tokens = policy.sample(ctx, config.temperature, derive_seed(seed, 1_000_003, idx, j), config.max_tokens)
            text = " ".join(tokens)
            outputs.append((inst.id, text))
            rewards.append(scorer(text, target))
            if policy is not base:
                steps = list(tokens) + [EOS] if len(tokens) < config.max_tokens else list(tokens)
                for pos in range(len(steps)):
                    p = policy.next_distribution(ctx.extend(*tokens[:pos]))
                    q = base.next_distribution(LmContext(ctx.text, tuple(tokens[:pos])))
                    kls.append(kl_penalty(p, q))
    return float(np.mean(rewards)), float(np.mean(kls)) if kls else 0.0, outputs


def run_loop(
    dataset: Sequence[CtrInstance],
    base_policy: LanguageModel,
    config: QuarkConfig = QuarkConfig(),
    learner: Learner | None = None,
    seed: int = 0,
) -> LoopReport:
    """Run ``config.iterations`` explore -> quantize -> learn cycles.

    Row ``i`` (1-based) of the report describes the policy after ``i``
    cycles; ``baseline_reward`` is the same measurement on the initial
    policy. Rewards of the persisted pool are recomputed whenever the
    schedule switches reward kind.
    """
    learner = learner or CountLearner()
    if config.samples_per_instance * len(dataset) < config.quantiles:
        raise ValueError("first exploration would yield fewer samples than quantiles")
    base_reward, _, base_out = evaluate_policy(base_policy, base_policy, dataset, config, seed, None)
    report = LoopReport(config, seed, base_reward)
    report.eval_samples[0] = base_out
    pool: list[RewardedSample] = []
    policy = base_policy
    for it in range(config.iterations):
        reward = current_reward(config.schedule, it, config.tokenizer)
        rescore(pool, dataset, reward)
        pool.extend(explore(policy, dataset, config, it, seed, reward))
        pool, groups = quantize(pool, config.quantiles)
        policy = learn(learner, pool, base_policy, config)
        mean_top, mean_kl, outs = evaluate_policy(policy, base_policy, dataset, config, derive_seed(seed, it + 1), TOP_TOKEN)
        report.eval_samples[it + 1] = outs
        report.rows.append(
            IterationRow(it + 1, reward.kind.value, len(pool), mean_top, mean_kl, groups[0].min_reward, groups[-1].max_reward)
        )
    report.pool = pool
    return report


SCHEDULE_SWEEP_COLUMNS = ("schedule", "rouge1_f1", "rouge2_f1", "rougeL_f1", "meteor", "final_mean_top_reward")


def schedule_sweep(
    dataset: Sequence[CtrInstance],
    base_policy: LanguageModel,
    config: QuarkConfig,
    schedules: Sequence[Schedule | str] = tuple(Schedule),
    learner: Learner | None = None,
    seed: int = 0,
) -> list[tuple[Schedule, dict[str, float]]]:
    """Compare reward schedules: final-policy samples scored against the highlights."""
    targets = {inst.id: tokenize(concat_highlights(inst), config.tokenizer).tokens for inst in dataset}
    rows = []
    for sched in schedules:
        sched = Schedule(sched)
        cfg = QuarkConfig(**{**asdict(config), "schedule": sched, "tokenizer": config.tokenizer})
        report = run_loop(dataset, base_policy, cfg, learner, seed)
        outs = report.eval_samples[cfg.iterations]
        sums = Counter()
        for inst_id, text in outs:
            cand = tokenize(text, config.tokenizer).tokens
            tgt = targets[inst_id]
            sums["rouge1_f1"] += rouge_n(cand, tgt, 1).f1
            sums["rouge2_f1"] += rouge_n(cand, tgt, 2).f1
            sums["rougeL_f1"] += rouge_l(cand, tgt).f1
            sums["meteor"] += meteor_lite(cand, tgt).f1
        means = {k: sums[k] / len(outs) for k in SCHEDULE_SWEEP_COLUMNS[1:5]}
        means["final_mean_top_reward"] = report.reward_at(cfg.iterations)
        rows.append((sched, means))
    return rows
