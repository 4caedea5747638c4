"""
Building a modular distillation prompt
======================================

The prompt walks a model through listing the highlighted spans, merging
them sentence by sentence and writing the final reduction. Instructions and
worked exemplars live in editable text files shipped with the package.
"""

from ctrkit.corpus import make_instance
from ctrkit.distill import PromptConfig, build_prompt, extract_answer, filter_generated, mark_highlights

doc = "The ferry service resumed on Friday after storms, though fares rose by a third."
inst = make_instance("ferry", doc, [(0, 33), (50, 78)])

print(mark_highlights(inst).text, end="\n\n")
print(build_prompt(inst, PromptConfig(variant="modular", exemplar_count=1)))

# a completion is cut at its last answer line
completion = ("Spans 1,2 are combined to form sentence 1: The ferry service resumed but fares rose by a third.\n"
              "So, the answer is:\nThe ferry service resumed on Friday, but fares rose by a third.")
answer, flagged = extract_answer(completion)
print("extracted:", answer, "| flagged:", flagged)

# generated summaries far from the highlights are filtered out
split = filter_generated([(inst, answer), (inst, "Storms hit the coast.")], threshold=0.5)
for _, text, score in split.kept + split.rejected:
    print(f"{score:.3f}  {text}")
