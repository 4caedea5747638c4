"""
Lookahead decoding toward the highlights
========================================

Beam search where each expansion is also scored by how well a short greedy
continuation matches the highlights. With lambda = 0 this is ordinary beam
search; raising lambda trades likelihood for highlight adherence.
"""

import math
from pathlib import Path

from ctrkit.corpus import concat_highlights, load_dataset
from ctrkit.decoder import DecoderConfig, decode, decode_text, sweep
from ctrkit.lm import LmContext, ScriptedLM, train_ngram

# One decision, two tokens. The model prefers B (0.6) but the highlight is "A".
model = ScriptedLM({"": [("B", 0.6), ("A", 0.4)]})
flip = math.log(0.6 / 0.4)
for lam in (0.0, flip - 0.01, flip + 0.01, 1.0):
    out = decode_text(model, LmContext("doc"), "A", DecoderConfig(beam_size=2, lam=lam, lookahead=1))
    print(f"lambda={lam:.3f} -> {out.text}")

# A suite where a repeated distractor clause dominates the n-gram statistics.
suite = Path(__file__).resolve().parent.parent / "tests" / "fixtures" / "distractor_suite.jsonl"
ds = load_dataset(suite)
lm = train_ngram([i.document for i in ds], order=3, k=0.01, source_weight=0.5, sentence_level=True)

inst = ds[0]
print("\ndocument:  ", inst.document)
print("highlights:", concat_highlights(inst))
for lam in (0.0, 2.0):
    result = decode(lm, inst, DecoderConfig(lam=lam))
    print(f"lambda={lam}: {result.text!r}  (logprob {result.best.logprob_sum:.2f}, g {result.best.lookahead_score:.2f})")

# the step-by-step trace keeps every beam for audit
print("\nfirst step of the trace:")
for h in decode(lm, inst, DecoderConfig(beam_size=3, lam=2.0)).trace[0]["beam"]:
    print("   ", h["tokens"], f"f={h['f']:.3f}")

# small grid over beam size and lambda
print("\nk  lambda  rougeL_f1")
for row in sweep(lm, list(ds)[:8], beams=[2, 8], lambdas=[0.0, 2.0], lookaheads=[8]):
    print(f"{row.config.beam_size:<2} {row.config.lam:<7} {row.means['rougeL']:.3f}")
