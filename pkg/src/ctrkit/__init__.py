"""ctrkit: highlight-adherence tooling for controlled text reduction.

Submodules
----------
corpus    data model, JSONL loading, highlight spans, tokenization
metrics   ROUGE-1/2/L, METEOR-lite, micro precision/recall
lm        language-model contract (n-gram, scripted, remote HTTP)
decoder   lookahead beam search guided by the highlights
quark     reward-quantized exploration/learning loop
distill   prompt construction, completion client, alignment audits
cli       ``ctrkit`` command line
"""

__version__ = "0.1.0"
