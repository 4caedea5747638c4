"""
Scoring a reduction against its highlights
==========================================

ROUGE-1/2/L and a light METEOR, computed between a system output and the
concatenated highlighted spans of the source document.
"""

from ctrkit.corpus import TokenizerOptions, concat_highlights, make_instance, tokenize
from ctrkit.metrics import UnitAnnotation, micro_pr, rouge_l, score_instance

doc = ("The museum reopened on Sunday after a two-year renovation, "
       "and visitors queued for hours to see the restored murals.")
inst = make_instance("demo", doc, [(0, 35), (89, 111)])
print("highlights:", concat_highlights(inst))

# a faithful reduction and one that wanders off
for system in ["The museum reopened on Sunday with restored murals.",
               "Visitors queued for hours in the rain."]:
    report = score_instance(system, inst)
    row = "  ".join(f"{name}={prf.f1:.3f}" for name, prf in report.scores.items())
    print(f"{system!r}\n    {row}")

# ROUGE-L works on any token sequences
p, r, f, _ = rouge_l(list("abcd"), list("axc"))
print(f"\nrouge_l(abcd, axc): P={p:.3f} R={r:.3f} F1={f:.4f}")

# stemming is a tokenizer option shared by every metric
print(tokenize("Restored murals, restoring walls", TokenizerOptions(stem=True)).tokens)

# fact-level micro precision/recall from annotated unit counts
units = [UnitAnnotation(tp=8, fp=2, fn=2), UnitAnnotation(tp=3, fp=0, fn=4)]
print("micro P/R/F1:", tuple(round(v, 3) for v in micro_pr(units)[:3]))
