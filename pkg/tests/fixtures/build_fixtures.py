"""Regenerate the committed JSONL fixtures.

    python tests/fixtures/build_fixtures.py

distractor_suite.jsonl
    20 documents where a repeated "distractor" clause dominates the n-gram
    statistics and the highlighted clause is a rarer continuation.
quark_corpus.jsonl
    Synthetic documents whose highlights are substrings of the documents;
    the training corpus for the toy reward-quantized loop.
"""

import json
import random
from pathlib import Path

HERE = Path(__file__).parent

SUBJECTS = [
    "the mayor", "the storm", "the company", "the team", "the river", "the senator", "the museum",
    "the airline", "the school", "the court", "the farmer", "the police", "the bank", "the hospital",
    "the union", "the army", "the ship", "the factory", "the festival", "the council",
]
DISTRACTORS = [
    "praised the new plan", "hit the northern coast", "reported higher profits", "won the final game",
    "flooded the old town", "criticized the budget", "opened a new wing", "cancelled many flights",
    "closed for the summer", "rejected the appeal", "sold the whole harvest", "arrested two suspects",
    "raised interest rates", "hired more nurses", "called a strike", "moved more troops",
    "reached the harbor", "cut three hundred jobs", "drew large crowds", "approved the tax",
]
TARGETS = [
    "resigned after the vote", "destroyed six bridges", "paid its workers late", "lost its coach",
    "washed away crops", "proposed health reform", "returned stolen paintings", "grounded every jet",
    "fired the principal", "freed the prisoner", "bought new tractors", "found the missing girl",
    "lent money abroad", "treated flu victims", "signed a contract", "left the capital",
    "carried injured sailors", "polluted the lake", "honored local poets", "banned night markets",
]


def span_of(doc, phrase):
    start = doc.index(phrase)
    return [start, start + len(phrase)]


def distractor_suite():
    rows = []
    for i, (s, d, t) in enumerate(zip(SUBJECTS, DISTRACTORS, TARGETS)):
        cap = s[0].upper() + s[1:]
        doc = f"{cap} {d}. Later {s} {t}. Officials said {s} {d}."
        hl = f"{s} {t}"
        rows.append({"id": f"dx{i:02d}", "document": doc, "highlights": [span_of(doc, hl)]})
    return rows


QUARK_TOPICS = [
    ("the harbor", ["ships arrived early", "cranes moved cargo", "workers unloaded grain"]),
    ("the orchard", ["apples ripened fast", "pickers filled crates", "buyers paid cash"]),
    ("the library", ["readers borrowed novels", "staff repaired shelves", "children heard stories"]),
    ("the station", ["trains left late", "guards checked tickets", "crowds waited outside"]),
    ("the clinic", ["nurses gave vaccines", "doctors saw patients", "families waited calmly"]),
    ("the market", ["vendors sold fish", "prices rose sharply", "shoppers bought bread"]),
    ("the mine", ["miners found copper", "engineers pumped water", "trucks hauled ore"]),
    ("the stadium", ["fans sang loudly", "players trained hard", "referees met early"]),
]
FILLER = [
    "some residents said nothing had changed",
    "the weather was mild and dry",
    "a spokesman declined to comment",
    "nobody expected any trouble",
]


def quark_corpus(seed=7):
    rng = random.Random(seed)
    rows = []
    for i, (place, events) in enumerate(QUARK_TOPICS):
        for j in range(2):
            fill = rng.sample(FILLER, 2)
            ev = events[:]
            rng.shuffle(ev)
            doc = f"At {place} {ev[0]}. {fill[0].capitalize()}. At {place} {ev[1]}. {fill[1].capitalize()}."
            hl = [span_of(doc, f"{place} {ev[0]}"), span_of(doc, f"{place} {ev[1]}")]
            rows.append({"id": f"q{i}{j}", "document": doc, "highlights": hl})
    return rows


def write(name, rows):
    with open(HERE / name, "w", encoding="utf-8") as fh:
        for r in rows:
            fh.write(json.dumps(r) + "\n")


if __name__ == "__main__":
    write("distractor_suite.jsonl", distractor_suite())
    write("quark_corpus.jsonl", quark_corpus())
