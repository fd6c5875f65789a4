"""Rule-based linguistic probes: minimal edits to intruder sentences.

Eight phenomena, each driven by a versioned rule table under data/. Edits are
recorded as token spans over the whitespace tokens of the original sentence;
a sentence with no rule target comes back unchanged with applicable=False.
"""
from __future__ import annotations

import json
import random
import re
from dataclasses import dataclass
from importlib import resources
from typing import Sequence

from .dataio import DatasetInstance
from .textutil import derive_seed

PHENOMENA = (
    "gender",
    "animacy_down",
    "animacy_up",
    "demonstrative",
    "conjunction",
    "past_to_future",
    "negation",
    "number",
)


def _load(name: str) -> dict:
    return json.loads(resources.files("benchforge.data").joinpath(name).read_text("utf-8"))


_PRONOUNS = _load("pronouns.json")
_CONJUNCTIONS = _load("conjunctions.json")
_PAST = _load("past_to_base.json")
_NEGATION = _load("negation.json")
_NUMBER = _load("number_rules.json")

_PAST_TO_BASE: dict[str, str] = _PAST["past_to_base"]
_NOT_PAST = frozenset(_PAST["not_past"])
_TENSE_SKIP_AFTER = frozenset(_PAST["skip_after"]) | {"the", "a", "an", "their", "its", "his", "her"}
_NON_NOUN = frozenset(_PRONOUNS["non_noun_followers"])
_SUBJECT_SIGNALS = frozenset(_PRONOUNS["subject_signals"])
_THAT_SKIP = frozenset(_PRONOUNS["demonstrative_that_skip"])
_PARTICIPLES = frozenset(_NEGATION["participles"])


@dataclass(frozen=True)
class Edit:
    start: int  # token span [start, end) over whitespace tokens
    end: int
    original: str
    replacement: str  # empty string deletes the span

    def as_dict(self) -> dict:
        return {"start": self.start, "end": self.end,
                "original": self.original, "replacement": self.replacement}


@dataclass(frozen=True)
class ProbeInstance:
    base_instance_id: str
    phenomenon: str
    original_sentence: str
    probed_sentence: str
    edits: tuple[Edit, ...]
    applicable: bool

    def payload(self) -> dict:
        return {
            "phenomenon": self.phenomenon,
            "original_sentence": self.original_sentence,
            "edits": [e.as_dict() for e in self.edits],
        }


def _decompose(chunk: str) -> tuple[str, str, str]:
    i, j = 0, len(chunk)
    while i < j and not chunk[i].isalnum():
        i += 1
    while j > i and not chunk[j - 1].isalnum():
        j -= 1
    return chunk[:i], chunk[i:j], chunk[j:]


def _recase(core: str, replacement: str) -> str:
    if core.isupper() and len(core) > 1:
        return replacement.upper()
    if core[:1].isupper():
        return replacement[:1].upper() + replacement[1:]
    return replacement


def _next_core(lows: Sequence[str], i: int) -> str | None:
    for j in range(i + 1, len(lows)):
        if lows[j]:
            return lows[j]
    return None


def _noun_follows(lows: Sequence[str], i: int) -> bool:
    nxt = _next_core(lows, i)
    return nxt is not None and nxt[:1].isalpha() and nxt not in _NON_NOUN


def _simple_map_edits(cores, lows, table, her_rule=None) -> list[Edit]:
    edits = []
    for i, low in enumerate(lows):
        if her_rule is not None and low == "her":
            key = "before_noun" if _noun_follows(lows, i) else "default"
            edits.append(Edit(i, i + 1, cores[i], _recase(cores[i], her_rule[key])))
        elif low in table:
            edits.append(Edit(i, i + 1, cores[i], _recase(cores[i], table[low])))
    return edits


def _gender_edits(cores, lows, rng) -> list[Edit]:
    return _simple_map_edits(cores, lows, _PRONOUNS["gender"], _PRONOUNS["gender_her"])


def _animacy_down_edits(cores, lows, rng) -> list[Edit]:
    return _simple_map_edits(cores, lows, _PRONOUNS["animacy_down"], _PRONOUNS["animacy_down_her"])


def _animacy_up_edits(cores, lows, rng) -> list[Edit]:
    table = _PRONOUNS["animacy_up"]
    gender = rng.choice(("m", "f"))  # one consistent referent per sentence
    first_core = next((k for k, c in enumerate(lows) if c), None)
    edits = []
    for i, low in enumerate(lows):
        if low == "it":
            nxt = _next_core(lows, i)
            subject = i == first_core or (nxt is not None and nxt in _SUBJECT_SIGNALS)
            rep = table["it"]["subject" if subject else "object"][gender]
            edits.append(Edit(i, i + 1, cores[i], _recase(cores[i], rep)))
        elif low == "its":
            edits.append(Edit(i, i + 1, cores[i], _recase(cores[i], table["its"][gender])))
        elif low == "itself":
            edits.append(Edit(i, i + 1, cores[i], _recase(cores[i], table["itself"][gender])))
    return edits


def _demonstrative_edits(cores, lows, rng) -> list[Edit]:
    table = _PRONOUNS["demonstrative"]
    edits = []
    for i, low in enumerate(lows):
        if low == "this":
            edits.append(Edit(i, i + 1, cores[i], _recase(cores[i], table["this"])))
        elif low == "that":
            nxt = _next_core(lows, i)
            # Relative/complementizer "that" is not a demonstrative.
            if nxt is None or nxt in _THAT_SKIP or nxt in _PAST_TO_BASE or _is_regular_past(nxt):
                continue
            edits.append(Edit(i, i + 1, cores[i], _recase(cores[i], table["that"])))
    return edits


def _conjunction_edits(cores, lows, rng) -> list[Edit]:
    multi = _CONJUNCTIONS["multiword"]
    single = _CONJUNCTIONS["single"]
    for i, low in enumerate(lows):
        if not low:
            continue
        if i + 1 < len(lows) and lows[i + 1]:
            pair = f"{low} {lows[i + 1]}"
            if pair in multi:
                rep = _recase(cores[i], multi[pair])
                return [Edit(i, i + 2, f"{cores[i]} {cores[i + 1]}", rep)]
        if low in single:
            return [Edit(i, i + 1, cores[i], _recase(cores[i], single[low]))]
    return []


def _strip_ed(stem: str) -> str:
    if len(stem) >= 3 and stem[-1] == stem[-2] and stem[-1].isalpha() \
            and stem[-1] not in "lsfze" and stem[-3] in "aeiou":
        return stem[:-1]
    return stem


def _past_base(low: str) -> str | None:
    if low in _PAST_TO_BASE:
        return _PAST_TO_BASE[low]
    if _is_regular_past(low):
        if low.endswith("ied"):
            return low[:-3] + "y"
        return _strip_ed(low[:-2])
    return None


def _is_regular_past(low: str) -> bool:
    return (
        len(low) >= 4
        and low.isalpha()
        and low.endswith("ed")
        and not low.endswith("eed")
        and low not in _NOT_PAST
        and low not in _PAST_TO_BASE
    )


def _past_to_future_edits(cores, lows, rng) -> list[Edit]:
    edits = []
    prev = None
    for i, low in enumerate(lows):
        if not low:
            continue
        if prev in _TENSE_SKIP_AFTER or low in _NOT_PAST:
            prev = low
            continue
        if not (cores[i].islower() or prev is None):
            prev = low  # capitalised mid-sentence: likely a name, not a verb
            continue
        base = _PAST_TO_BASE.get(low)
        if base is None and _is_regular_past(low):
            base = _past_base(low)
        if base is not None:
            edits.append(Edit(i, i + 1, cores[i], _recase(cores[i], f"will {base}")))
        prev = low
    return edits


def _strip_third_person_s(low: str) -> str | None:
    if low.endswith("ies") and len(low) > 4:
        return low[:-3] + "y"
    if low.endswith("es") and len(low) > 3 and (low[-3] in "sxzo" or low[-4:-2] in ("sh", "ch")):
        return low[:-2]
    if low.endswith("s") and len(low) > 2:
        return low[:-1]
    return None


def _negation_edits(cores, lows, rng) -> list[Edit]:
    deneg = _NEGATION["denegation"]
    for i, low in enumerate(lows):
        canon = low.replace("’", "'")
        if canon in deneg:
            return [Edit(i, i + 1, cores[i], _recase(cores[i], deneg[canon]))]
        if low == "not":
            return [Edit(i, i + 1, cores[i], "")]

    aux = _NEGATION["aux_negation"]
    have = _NEGATION["have_negation"]
    third = set(_NEGATION["third_person_subjects"])
    prev = None
    for i, low in enumerate(lows):
        if not low:
            continue
        if low in have:
            nxt = _next_core(lows, i)
            kind = "auxiliary" if nxt is not None and (nxt in _PARTICIPLES or nxt.endswith("ed")) else "main"
            return [Edit(i, i + 1, cores[i], _recase(cores[i], have[low][kind]))]
        if low in aux:
            return [Edit(i, i + 1, cores[i], _recase(cores[i], aux[low]))]
        if prev not in _TENSE_SKIP_AFTER and (cores[i].islower() or prev is None):
            base = _past_base(low) if low not in _NOT_PAST else None
            if base is not None:
                return [Edit(i, i + 1, cores[i], _recase(cores[i], f"didn't {base}"))]
        if low.endswith("s") and prev is not None and (prev in third):
            base = _strip_third_person_s(low)
            if base is not None:
                return [Edit(i, i + 1, cores[i], _recase(cores[i], f"doesn't {base}"))]
        prev = low
    return []


_INT_RE = re.compile(r"^\d{1,3}(?:,\d{3})+$|^\d+$")
_DEC_RE = re.compile(r"^\d+\.\d+$")
_YEAR_PAIR_RE = re.compile(r"^(\d{4})[-–—](\d{4})$")


def _is_year(low: str) -> bool:
    return low.isdigit() and len(low) == 4 and _NUMBER["year_min"] <= int(low) <= _NUMBER["year_max"]


def _number_edits(cores, lows, rng) -> list[Edit]:
    units = _NUMBER["unit_downshift"]
    connectors = set(_NUMBER["range_connectors"])
    era = _NUMBER["era_suffix"]
    edits = []
    i = 0
    while i < len(lows):
        low = lows[i]
        if not low:
            i += 1
            continue
        m = _YEAR_PAIR_RE.match(low)
        if m and _is_year(m.group(1)) and _is_year(m.group(2)):
            base = int(m.group(1)) // 10
            edits.append(Edit(i, i + 1, cores[i], f"{base} {era} to {base + 1} {era}"))
            i += 1
            continue
        if _is_year(low) and i + 2 < len(lows) and lows[i + 1] in connectors and _is_year(lows[i + 2]):
            base = int(low) // 10
            edits.append(Edit(i, i + 1, cores[i], f"{base} {era}"))
            edits.append(Edit(i + 2, i + 3, cores[i + 2], f"{base + 1} {era}"))
            i += 3
            continue
        if (_INT_RE.match(low) or _DEC_RE.match(low)) and i + 1 < len(lows) and lows[i + 1] in units:
            edits.append(Edit(i + 1, i + 2, cores[i + 1], _recase(cores[i + 1], units[lows[i + 1]])))
            i += 2
            continue
        if _is_year(low):
            edits.append(Edit(i, i + 1, cores[i], f"{int(low) // 10} {era}"))
            i += 1
            continue
        if _INT_RE.match(low):
            n = int(low.replace(",", ""))
            rep = f"{n / 10:.1f}" if n >= 10 else f"{n * 1000}"
            edits.append(Edit(i, i + 1, cores[i], rep))
            i += 1
            continue
        if _DEC_RE.match(low):
            edits.append(Edit(i, i + 1, cores[i], f"{float(low) / 10:g}"))
            i += 1
            continue
        i += 1
    return edits


_APPLIERS = {
    "gender": _gender_edits,
    "animacy_down": _animacy_down_edits,
    "animacy_up": _animacy_up_edits,
    "demonstrative": _demonstrative_edits,
    "conjunction": _conjunction_edits,
    "past_to_future": _past_to_future_edits,
    "negation": _negation_edits,
    "number": _number_edits,
}


def apply_edits(sentence: str, edits: Sequence[Edit]) -> str:
    tokens = sentence.split()
    out = list(tokens)
    for e in sorted(edits, key=lambda e: -e.start):
        lead, _, _ = _decompose(tokens[e.start])
        _, _, trail = _decompose(tokens[e.end - 1])
        if e.replacement:
            out[e.start:e.end] = [lead + e.replacement + trail]
        else:
            keep = lead + trail
            out[e.start:e.end] = [keep] if keep else []
    return " ".join(out)


def apply_probe(
    sentence: str,
    phenomenon: str,
    rng: random.Random | None = None,
    base_instance_id: str = "",
) -> ProbeInstance:
    if phenomenon not in _APPLIERS:
        raise ValueError(f"unknown phenomenon {phenomenon!r}")
    rng = rng or random.Random(0)
    tokens = sentence.split()
    cores = [_decompose(t)[1] for t in tokens]
    lows = [c.lower() for c in cores]
    edits = tuple(_APPLIERS[phenomenon](cores, lows, rng))
    probed = apply_edits(sentence, edits) if edits else sentence
    applicable = bool(edits) and probed != sentence
    if not applicable:
        probed, edits = sentence, ()
    return ProbeInstance(base_instance_id, phenomenon, sentence, probed, edits, applicable)


# ---------------------------------------------------------------------------
# Suite construction
# ---------------------------------------------------------------------------

@dataclass
class ProbeSuite:
    phenomenon: str
    requested: int
    probes: list[ProbeInstance]
    probed_instances: list[DatasetInstance]

    @property
    def shortfall(self) -> int:
        return max(0, self.requested - len(self.probes))


def build_probe_suite(
    instances: Sequence[DatasetInstance],
    phenomenon: str,
    target_n: int,
    seed: int,
) -> ProbeSuite:
    """Probe the intruder sentences of up to target_n incoherent instances."""
    incoherent = sorted((i for i in instances if i.incoherent), key=lambda i: i.instance_id)
    order = list(incoherent)
    random.Random(derive_seed(seed, "probe-order", phenomenon)).shuffle(order)

    suite = ProbeSuite(phenomenon, target_n, [], [])
    for inst in order:
        if len(suite.probes) == target_n:
            break
        rng = random.Random(derive_seed(seed, "probe-choice", phenomenon, inst.instance_id))
        sentence = inst.sentences[inst.intruder_index - 1]
        probe = apply_probe(sentence, phenomenon, rng, base_instance_id=inst.instance_id)
        if not probe.applicable:
            continue
        sentences = list(inst.sentences)
        sentences[inst.intruder_index - 1] = probe.probed_sentence
        suite.probes.append(probe)
        suite.probed_instances.append(
            DatasetInstance(
                instance_id=inst.instance_id,
                source=inst.source,
                sentences=tuple(sentences),
                label=inst.label,
                intruder_index=inst.intruder_index,
                provenance=inst.provenance,
                split=inst.split,
                probe=probe.payload(),
            )
        )
    suite.probed_instances.sort(key=lambda i: i.instance_id)
    suite.probes.sort(key=lambda p: p.base_instance_id)
    return suite
