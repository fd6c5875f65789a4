"""Dataset instance schema and line-delimited I/O.

One instance per line with exact field names: instance_id, source, sentences,
label, intruder_index, provenance, split; probed instances additionally carry
a "probe" object. Files are written sorted by instance_id so reruns are
byte-identical regardless of worker count.
"""
from __future__ import annotations

import json
import os
from contextlib import contextmanager
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, Iterator

LABEL_COHERENT = "coherent"
LABEL_INCOHERENT = "incoherent"
SPLITS = ("train", "test")


class DataError(ValueError):
    pass


@dataclass(frozen=True)
class Provenance:
    source_doc_id: str
    replaced_sentence_index: int
    replaced_text: str
    donor_doc_id: str
    donor_sentence_index: int
    donor_text: str
    similarity_to_replaced: float
    difficulty: float | None
    filter_mode: str  # "difficult-pool" | "all-pool"


@dataclass(frozen=True)
class DatasetInstance:
    instance_id: str
    source: str
    sentences: tuple[str, ...]
    label: str
    intruder_index: int | None
    provenance: Provenance | None
    split: str
    probe: dict | None = None

    def __post_init__(self):
        incoherent = self.label == LABEL_INCOHERENT
        if self.label not in (LABEL_COHERENT, LABEL_INCOHERENT):
            raise DataError(f"{self.instance_id}: unknown label {self.label!r}")
        if self.split not in SPLITS:
            raise DataError(f"{self.instance_id}: unknown split {self.split!r}")
        if incoherent != (self.intruder_index is not None) or incoherent != (self.provenance is not None):
            raise DataError(f"{self.instance_id}: label/intruder_index/provenance inconsistent")
        if self.intruder_index is not None and not 2 <= self.intruder_index <= len(self.sentences):
            raise DataError(f"{self.instance_id}: intruder_index {self.intruder_index} out of range")
        if not 3 <= len(self.sentences) <= 8:
            raise DataError(f"{self.instance_id}: {len(self.sentences)} sentences outside 3..8")

    @property
    def incoherent(self) -> bool:
        return self.label == LABEL_INCOHERENT

    def non_opening_indices(self) -> range:
        return range(2, len(self.sentences) + 1)


def instance_to_row(inst: DatasetInstance) -> dict:
    row = {
        "instance_id": inst.instance_id,
        "source": inst.source,
        "sentences": list(inst.sentences),
        "label": inst.label,
        "intruder_index": inst.intruder_index,
        "provenance": asdict(inst.provenance) if inst.provenance else None,
        "split": inst.split,
    }
    if inst.probe is not None:
        row["probe"] = inst.probe
    return row


def row_to_instance(row: dict) -> DatasetInstance:
    prov = row.get("provenance")
    return DatasetInstance(
        instance_id=row["instance_id"],
        source=row["source"],
        sentences=tuple(row["sentences"]),
        label=row["label"],
        intruder_index=row.get("intruder_index"),
        provenance=Provenance(**prov) if prov else None,
        split=row["split"],
        probe=row.get("probe"),
    )


def write_instances(instances: Iterable[DatasetInstance], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for inst in instances:
            fh.write(json.dumps(instance_to_row(inst), sort_keys=True) + "\n")


def read_instances(path: str | Path) -> list[DatasetInstance]:
    out: list[DatasetInstance] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                out.append(row_to_instance(json.loads(line)))
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise DataError(f"{path}:{lineno}: bad instance row ({exc})") from exc
    return out


def iter_jsonl(path: str | Path) -> Iterator[dict]:
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                yield json.loads(line)


def write_jsonl(rows: Iterable[dict], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")


@contextmanager
def atomic_output(path: str | Path):
    """Write to <path>.partial, renaming into place only on success."""
    path = Path(path)
    partial = path.with_name(path.name + ".partial")
    yield partial
    os.replace(partial, path)
