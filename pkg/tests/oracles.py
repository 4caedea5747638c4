"""Independent reference implementations used by the tests.

These are deliberately naive (exponential LCS, loop-based n-gram counting,
textbook beam search) and share no code with the package beyond the model
interface.
"""

from __future__ import annotations

import itertools
import json
import math
from fractions import Fraction
from pathlib import Path

FIXTURES = Path(__file__).parent / "fixtures"
DISTRACTOR_SUITE = FIXTURES / "distractor_suite.jsonl"
QUARK_CORPUS = FIXTURES / "quark_corpus.jsonl"
QUARK_CALIBRATION = FIXTURES / "quark_calibration.json"

# Model used for every fixture-suite experiment (see calibrate_quark.py).
FIXTURE_MODEL = json.loads(QUARK_CALIBRATION.read_text())["model"]


def fixture_model(dataset):
    from ctrkit.lm import train_ngram

    return train_ngram(
        [inst.document for inst in dataset],
        FIXTURE_MODEL["order"],
        FIXTURE_MODEL["k"],
        source_weight=FIXTURE_MODEL["source_weight"],
        sentence_level=FIXTURE_MODEL["sentence_level"],
    )


def is_subsequence(sub, seq) -> bool:
    it = iter(seq)
    return all(any(x == y for y in it) for x in sub)


def brute_lcs(a, b) -> int:
    """Longest common subsequence by enumerating every subsequence of the shorter side."""
    short, long_ = (a, b) if len(a) <= len(b) else (b, a)
    for size in range(len(short), 0, -1):
        for idx in itertools.combinations(range(len(short)), size):
            if is_subsequence([short[i] for i in idx], long_):
                return size
    return 0


def _f(p: Fraction, r: Fraction) -> Fraction:
    return Fraction(0) if p + r == 0 else 2 * p * r / (p + r)


def oracle_rouge_l(cand, tgt):
    lcs = brute_lcs(cand, tgt)
    p = Fraction(lcs, len(cand)) if cand else Fraction(0)
    r = Fraction(lcs, len(tgt)) if tgt else Fraction(0)
    return p, r, _f(p, r)


def oracle_rouge_n(cand, tgt, n):
    cg = [tuple(cand[i : i + n]) for i in range(len(cand) - n + 1)]
    tg = [tuple(tgt[i : i + n]) for i in range(len(tgt) - n + 1)]
    overlap = 0
    for g in set(cg):
        overlap += min(cg.count(g), tg.count(g))
    p = Fraction(overlap, len(cg)) if cg else Fraction(0)
    r = Fraction(overlap, len(tg)) if tg else Fraction(0)
    return p, r, _f(p, r)


def reference_beam_search(model, context, beam_size, max_tokens, expansions=None):
    """Textbook beam search on summed log-probabilities.

    Finished sequences stay in the beam and compete on score; ties are broken
    by token sequence. Returns the best token tuple.
    """
    expansions = expansions or beam_size
    eos = model.eos
    beam = [((), 0.0, False)]
    for step in range(max_tokens):
        pool = [b for b in beam if b[2]]
        for toks, lp, done in beam:
            if done:
                continue
            dist = model.next_distribution(context.extend(*toks), expansions)
            for tok, tlp in dist.entries:
                if tok == eos:
                    pool.append((toks, lp + tlp, True))
                else:
                    pool.append((toks + (tok,), lp + tlp, False))
        pool.sort(key=lambda b: (-b[1], b[0]))
        beam = pool[:beam_size]
        if all(b[2] for b in beam):
            break
    return min(beam, key=lambda b: (-b[1], b[0]))[0]


def close(a: float, b: float, tol: float = 1e-12) -> bool:
    return math.isclose(a, b, rel_tol=0, abs_tol=tol)
