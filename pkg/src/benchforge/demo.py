"""Deterministic synthetic corpora for demos, fixtures, and desk-scale runs.

Documents are built from topic-specific pseudo-word lexicons mixed with real
English function words, light verbs, pronouns, and numbers, so retrieval has
topical signal and the probe rules find targets. Everything derives from the
seed; generation is order-independent per record id.
"""
from __future__ import annotations

import json
import random
from pathlib import Path

from .corpus import RawRecord
from .textutil import derive_seed

FUNCTION_WORDS = ("the", "of", "and", "in", "to", "a", "with", "for", "on", "as", "by", "at")
PAST_VERBS = (
    "led", "held", "won", "became", "served", "built", "founded", "kept",
    "made", "took", "began", "wrote", "sold", "ran", "grew", "left", "met",
    "gave", "found", "brought", "opened", "joined", "formed", "crossed",
)
_CONSONANTS = "bcdfgklmnprstvz"
_VOWELS = "aeiou"


def _word(rng: random.Random, min_syl: int = 2, max_syl: int = 3) -> str:
    n = rng.randint(min_syl, max_syl)
    return "".join(rng.choice(_CONSONANTS) + rng.choice(_VOWELS) for _ in range(n))


class TopicLexicon:
    def __init__(self, seed: int, topic: int, vocab_size: int = 40,
                 boilerplate: bool = False):
        rng = random.Random(derive_seed(seed, "demo-vocab", str(topic)))
        self.nouns = [_word(rng) for _ in range(vocab_size)]
        self.names = [_word(rng).capitalize() for _ in range(8)]
        self.places = [_word(rng).capitalize() for _ in range(6)]
        # Zipf-ish weights keep a few nouns frequent, as in natural text.
        self.weights = [1.0 / (i + 1) for i in range(vocab_size)]
        # Boilerplate topics mimic template-stamped article families whose
        # sentences are near-copies across documents.
        self.boilerplate = boilerplate
        self.stock = [self.nouns[k] for k in range(4)]

    def noun(self, rng: random.Random) -> str:
        return rng.choices(self.nouns, weights=self.weights, k=1)[0]

    def name(self, rng: random.Random) -> str:
        return rng.choice(self.names)

    def place(self, rng: random.Random) -> str:
        return rng.choice(self.places)


def _boilerplate_sentence(lex: TopicLexicon, rng: random.Random) -> str:
    a, b, c, d = lex.stock
    ordinal = rng.choice(("second", "third", "fourth", "fifth"))
    return f"The {a} {b} station served the {c} {d} district on the {ordinal} line each day."


def _sentence(lex: TopicLexicon, rng: random.Random) -> str:
    if lex.boilerplate and rng.random() < 0.85:
        return _boilerplate_sentence(lex, rng)
    n1, n2, n3 = lex.noun(rng), lex.noun(rng), lex.noun(rng)
    name, place = lex.name(rng), lex.place(rng)
    verb, verb2 = rng.choice(PAST_VERBS), rng.choice(PAST_VERBS)
    year = rng.randint(1850, 2019)
    y2 = year + rng.randint(1, 9)
    num = rng.randint(2, 95)
    dec = f"{rng.randint(2, 400) / 10:.1f}"
    forms = (
        f"{name} {verb} the {n1} of {n2} in {year}.",
        f"{name} was a {n1} of the {n2} {n3} from {year} to {y2}.",
        f"She {verb} the {n1} and the {n2} at {place}.",
        f"He {verb} {num} {n1} for the {n2} of {place}.",
        f"It is a {n1} of {n2} that {verb} the {n3}.",
        f"The {n1} has a length of {dec} km and a total of {num} {n2}.",
        f"This {n1} {verb} the {n2}, but the {n3} remained in {place}.",
        f"Although the {n1} {verb} the {n2}, it kept the {n3}.",
        f"The {n1} of {place} {verb} the {n2} and the {n3}.",
        f"Her {n1} {verb2} the {n2} near {place} in {year}.",
        f"The {n1} {verb} {num} {n2} and the {n3} of {place}.",
        f"{name} {verb} the {n1} that {verb2} the {n2} of {place}.",
        f"The {n1} has {num} {n2} and a {n3} in {place}.",
        f"He was the {n1} of {place} and {verb} its {n2} until {year}.",
    )
    return rng.choice(forms)


def demo_records(
    n_docs: int,
    seed: int,
    n_topics: int = 20,
    source: str = "wiki",
    vocab_size: int = 40,
    id_prefix: str | None = None,
    boilerplate_every: int = 7,
) -> list[RawRecord]:
    lexicons = [
        TopicLexicon(seed, t, vocab_size,
                     boilerplate=boilerplate_every > 0 and t % boilerplate_every == 3)
        for t in range(n_topics)
    ]
    prefix = id_prefix or source
    records = []
    for i in range(n_docs):
        rec_id = f"{prefix}-{i:05d}"
        rng = random.Random(derive_seed(seed, "demo-record", rec_id))
        lex = lexicons[i % n_topics]
        n_sent = rng.randint(3, 10)
        body = " ".join(_sentence(lex, rng) for _ in range(n_sent))
        if source == "wiki" and rng.random() < 0.3:
            tail = " ".join(_sentence(lex, rng) for _ in range(rng.randint(1, 3)))
            body = body + "\n\n" + tail
        records.append(RawRecord(id=rec_id, body=body, title=f"{lex.names[0]} {i}"))
    return records


def perturbed_copy(records: list[RawRecord], seed: int, rate: float) -> list[RawRecord]:
    """Word-substituted copies acting as paired historical snapshots."""
    out = []
    for rec in records:
        rng = random.Random(derive_seed(seed, "demo-perturb", rec.id))
        words = rec.body.split()
        for i, w in enumerate(words):
            if rng.random() < rate and w.islower() and w.isalpha() and w not in FUNCTION_WORDS:
                words[i] = _word(rng)
        out.append(RawRecord(id=rec.id, body=" ".join(words), snapshot_tag="snapshot"))
    return out


def write_records_jsonl(records: list[RawRecord], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            row: dict = {"id": rec.id, "text": rec.body}
            if rec.title is not None:
                row["title"] = rec.title
            if rec.snapshot_tag is not None:
                row["snapshot"] = rec.snapshot_tag
            fh.write(json.dumps(row, sort_keys=True) + "\n")


def write_records_stories(records: list[RawRecord], directory: str | Path) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for rec in records:
        text = rec.body + "\n\n@highlight\n\nsummary line one\n\n@highlight\n\nsummary line two\n"
        (d / f"{rec.id}.story").write_text(text, encoding="utf-8")
