"""
A reward-quantized loop on a toy corpus
=======================================

Explore with the current policy, rank the pool into reward quantiles, refit a
count-based policy conditioned on the quantile tokens, repeat. Rewards
alternate between ROUGE-L recall and precision against the highlights.
"""

from pathlib import Path

from ctrkit.corpus import load_dataset
from ctrkit.lm import train_ngram
from ctrkit.quark import QuarkConfig, Schedule, current_reward, run_loop

corpus = Path(__file__).resolve().parent.parent / "tests" / "fixtures" / "quark_corpus.jsonl"
ds = list(load_dataset(corpus))
base = train_ngram([i.document for i in ds], order=3, k=0.01, source_weight=0.5, sentence_level=True)

print([current_reward(Schedule.ALTERNATE_PR, i).kind.value for i in range(4)])

report = run_loop(ds, base, QuarkConfig(iterations=5, quantiles=8), seed=0)
print(f"\niteration 0: mean top-token reward {report.reward_at(0):.3f}")
for row in report.rows:
    print(f"iteration {row.iteration}: {row.mean_top_reward:.3f}  "
          f"(trained on {row.reward_kind}, pool {row.pool_size}, KL {row.mean_kl:.3f})")

# what the final policy writes when asked for top-quantile output
for inst_id, text in report.eval_samples[5][:3]:
    print(inst_id, "->", text)
