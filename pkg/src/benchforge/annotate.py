"""Human-verification service: HIT assembly, persistence, aggregation.

Each HIT holds five documents, one of which is a control drawn from a
pre-identified easy pool; workers pick one intruder sentence per document or
NONE, and may never pick the opening sentence. Annotation writes go through a
single lock onto an append-only log with periodic snapshots; aggregation is a
pure function of the exported annotation multiset.
"""
from __future__ import annotations

import json
import os
import random
import secrets
import threading
import time
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .dataio import DatasetInstance
from .textutil import derive_seed

NONE_CHOICE = "NONE"
DEFAULT_MIN_AGREEMENT = 3
HIT_SIZE = 5
TEST_DOCS_PER_HIT = 4


class AnnotationError(ValueError):
    """Validation failure; http_status picks the API response code."""

    def __init__(self, message: str, http_status: int = 422):
        super().__init__(message)
        self.http_status = http_status


@dataclass(frozen=True)
class HitDocument:
    document_id: str
    is_control: bool
    is_filler: bool


@dataclass(frozen=True)
class HIT:
    hit_id: str
    documents: tuple[HitDocument, ...]
    assignments: int = 5

    def __post_init__(self):
        if len(self.documents) != HIT_SIZE:
            raise AnnotationError(f"{self.hit_id}: HIT must hold exactly {HIT_SIZE} documents")
        if sum(d.is_control for d in self.documents) != 1:
            raise AnnotationError(f"{self.hit_id}: HIT must hold exactly one control")

    @property
    def document_ids(self) -> tuple[str, ...]:
        return tuple(d.document_id for d in self.documents)

    @property
    def control_doc_id(self) -> str:
        return next(d.document_id for d in self.documents if d.is_control)


@dataclass(frozen=True)
class Annotation:
    hit_id: str
    document_id: str
    worker_id: str
    choice: int | str  # sentence index >= 2, or "NONE"
    timestamp: float


@dataclass(frozen=True)
class AggregatedLabel:
    document_id: str
    majority_choice: int | str | None  # None on a tie
    agreement_count: int
    retained: bool


def build_hits(
    test_instances: Sequence[DatasetInstance],
    control_pool: Sequence[DatasetInstance],
    seed: int,
) -> list[HIT]:
    """Partition the test set into HITs of 4 test docs + 1 easy control.

    A ragged tail is padded with repeats of earlier test documents flagged as
    fillers, which aggregation ignores.
    """
    if not control_pool:
        raise AnnotationError("control pool is empty", http_status=500)
    for ctrl in control_pool:
        if not ctrl.incoherent:
            raise AnnotationError(f"control {ctrl.instance_id!r} has no gold intruder", http_status=500)

    ids = sorted(i.instance_id for i in test_instances)
    rng = random.Random(derive_seed(seed, "hits"))
    rng.shuffle(ids)
    control_ids = sorted(i.instance_id for i in control_pool)

    hits: list[HIT] = []
    for start in range(0, len(ids), TEST_DOCS_PER_HIT):
        chunk = ids[start:start + TEST_DOCS_PER_HIT]
        fillers = []
        while len(chunk) + len(fillers) < TEST_DOCS_PER_HIT:
            fillers.append(ids[rng.randrange(start)])  # repeat an earlier test doc
        docs = [HitDocument(d, False, False) for d in chunk]
        docs += [HitDocument(d, False, True) for d in fillers]
        docs.append(HitDocument(rng.choice(control_ids), True, False))
        rng.shuffle(docs)
        hits.append(HIT(hit_id=f"hit-{len(hits):04d}", documents=tuple(docs)))
    return hits


# ---------------------------------------------------------------------------
# Aggregation
# ---------------------------------------------------------------------------

def aggregate_annotations(
    annotations: Iterable[Annotation | Mapping],
    min_agreement: int = DEFAULT_MIN_AGREEMENT,
    filler_keys: set[tuple[str, str]] | None = None,
    control_gold: Mapping[str, int] | None = None,
    expected_per_doc: int | None = None,
) -> dict:
    """Aggregate the annotation multiset into per-document majority labels.

    Controls feed the worker-quality report rather than the labels. Ties are
    not retained. Returns labels, worker quality, and under-annotated ids.
    """
    filler_keys = filler_keys or set()
    control_gold = dict(control_gold or {})

    votes: dict[str, list] = {}
    worker_hits: dict[str, list[bool]] = {}
    for ann in annotations:
        if isinstance(ann, Mapping):
            hit_id, doc_id = ann["hit_id"], ann["document_id"]
            worker, choice = ann["worker_id"], ann["choice"]
            if ann.get("is_filler"):
                continue
            if ann.get("is_control") and "gold_intruder_index" in ann:
                control_gold.setdefault(doc_id, ann["gold_intruder_index"])
        else:
            hit_id, doc_id, worker, choice = ann.hit_id, ann.document_id, ann.worker_id, ann.choice
            if (hit_id, doc_id) in filler_keys:
                continue
        if doc_id in control_gold:
            worker_hits.setdefault(worker, []).append(choice == control_gold[doc_id])
            continue
        votes.setdefault(doc_id, []).append(choice)

    labels: list[AggregatedLabel] = []
    under_annotated: list[str] = []
    for doc_id in sorted(votes):
        counter = Counter(votes[doc_id])
        if expected_per_doc is not None and len(votes[doc_id]) < expected_per_doc:
            under_annotated.append(doc_id)
        top_count = max(counter.values())
        top_choices = [c for c, n in counter.items() if n == top_count]
        tie = len(top_choices) > 1
        labels.append(
            AggregatedLabel(
                document_id=doc_id,
                majority_choice=None if tie else top_choices[0],
                agreement_count=top_count,
                retained=(not tie) and top_count >= min_agreement,
            )
        )

    worker_quality = {
        w: sum(hits) / len(hits) for w, hits in sorted(worker_hits.items()) if hits
    }
    retained = sum(l.retained for l in labels)
    return {
        "labels": labels,
        "worker_quality": worker_quality,
        "under_annotated": under_annotated,
        "retained_fraction": retained / len(labels) if labels else 0.0,
    }


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------

class AnnotationStore:
    """Append-only log plus periodic snapshot; recovery replays the log."""

    def __init__(self, state_dir: str | Path, snapshot_every: int = 50):
        self.state_dir = Path(state_dir)
        self.state_dir.mkdir(parents=True, exist_ok=True)
        self.log_path = self.state_dir / "annotations.log"
        self.snapshot_path = self.state_dir / "snapshot.json"
        self.snapshot_every = snapshot_every
        self._lock = threading.Lock()
        self._seq = 0
        self.annotations: list[Annotation] = []
        self.assignments: set[tuple[str, str]] = set()  # (worker_id, hit_id)
        self._recover()

    def _apply(self, entry: dict) -> None:
        if entry["type"] == "annotation":
            self.annotations.append(
                Annotation(
                    hit_id=entry["hit_id"],
                    document_id=entry["document_id"],
                    worker_id=entry["worker_id"],
                    choice=entry["choice"],
                    timestamp=entry["timestamp"],
                )
            )
        elif entry["type"] == "assign":
            self.assignments.add((entry["worker_id"], entry["hit_id"]))

    def _recover(self) -> None:
        start_seq = 0
        if self.snapshot_path.exists():
            snap = json.loads(self.snapshot_path.read_text("utf-8"))
            start_seq = snap["seq"]
            for entry in snap["entries"]:
                self._apply(entry)
            self._seq = start_seq
        if self.log_path.exists():
            with open(self.log_path, encoding="utf-8") as fh:
                for line in fh:
                    if not line.strip():
                        continue
                    entry = json.loads(line)
                    if entry["seq"] <= start_seq:
                        continue
                    self._apply(entry)
                    self._seq = entry["seq"]

    def _write_entry(self, entry: dict) -> None:
        with open(self.log_path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(entry, sort_keys=True) + "\n")
            fh.flush()
            os.fsync(fh.fileno())
        self._apply(entry)
        if self._seq % self.snapshot_every == 0:
            self._snapshot_locked()

    def _snapshot_locked(self) -> None:
        entries = [dict(type="annotation", seq=0, **asdict(a)) for a in self.annotations]
        entries += [
            {"type": "assign", "seq": 0, "worker_id": w, "hit_id": h}
            for w, h in sorted(self.assignments)
        ]
        tmp = self.snapshot_path.with_suffix(".json.tmp")
        tmp.write_text(json.dumps({"seq": self._seq, "entries": entries}, sort_keys=True), "utf-8")
        tmp.replace(self.snapshot_path)

    def record_assignment(self, worker_id: str, hit_id: str) -> None:
        with self._lock:
            if (worker_id, hit_id) in self.assignments:
                return
            self._seq += 1
            self._write_entry(
                {"type": "assign", "seq": self._seq, "worker_id": worker_id, "hit_id": hit_id}
            )

    def record_annotation(self, ann: Annotation) -> None:
        with self._lock:
            self._seq += 1
            self._write_entry({"type": "annotation", "seq": self._seq, **asdict(ann)})

    def snapshot_annotations(self) -> list[Annotation]:
        """Consistent copy for aggregation and export."""
        with self._lock:
            return list(self.annotations)


# ---------------------------------------------------------------------------
# Service
# ---------------------------------------------------------------------------

class AnnotationService:
    """Validation and assignment logic behind the HTTP API."""

    def __init__(
        self,
        test_instances: Sequence[DatasetInstance],
        control_pool: Sequence[DatasetInstance],
        store: AnnotationStore,
        seed: int = 0,
        min_agreement: int = DEFAULT_MIN_AGREEMENT,
    ):
        self.documents: dict[str, DatasetInstance] = {}
        for inst in list(test_instances) + list(control_pool):
            self.documents[inst.instance_id] = inst
        self.hits = build_hits(test_instances, control_pool, seed)
        self.hits_by_id = {h.hit_id: h for h in self.hits}
        self.store = store
        self.min_agreement = min_agreement
        self.control_gold = {c.instance_id: c.intruder_index for c in control_pool}
        self.filler_keys = {
            (h.hit_id, d.document_id) for h in self.hits for d in h.documents if d.is_filler
        }

    # -- assignment ---------------------------------------------------------

    def _done_by_worker(self, worker_id: str, hit: HIT) -> int:
        done = {
            a.document_id
            for a in self.store.annotations
            if a.worker_id == worker_id and a.hit_id == hit.hit_id
        }
        return len(done)

    def next_hit(self, worker_id: str) -> dict | None:
        if not worker_id:
            raise AnnotationError("worker id required")
        started = {h for w, h in self.store.assignments if w == worker_id}
        workers_per_hit: dict[str, set[str]] = {}
        for w, h in self.store.assignments:
            workers_per_hit.setdefault(h, set()).add(w)
        for hit in self.hits:
            completed = self._done_by_worker(worker_id, hit)
            if completed >= HIT_SIZE:
                continue
            if hit.hit_id in started:
                return self._hit_view(hit, completed)
            if len(workers_per_hit.get(hit.hit_id, set())) < hit.assignments:
                self.store.record_assignment(worker_id, hit.hit_id)
                return self._hit_view(hit, completed)
        return None

    def _hit_view(self, hit: HIT, progress: int) -> dict:
        # No labels, provenance, or control/filler markers leave the server.
        return {
            "hit_id": hit.hit_id,
            "progress": progress,
            "documents": [
                {
                    "document_id": d.document_id,
                    "sentences": list(self.documents[d.document_id].sentences),
                }
                for d in hit.documents
            ],
        }

    # -- submission ---------------------------------------------------------

    def submit(self, hit_id: str, document_id: str, worker_id: str, choice) -> Annotation:
        hit = self.hits_by_id.get(hit_id)
        if hit is None:
            raise AnnotationError(f"unknown hit {hit_id!r}", http_status=404)
        if document_id not in hit.document_ids:
            raise AnnotationError(f"document {document_id!r} not in {hit_id!r}", http_status=404)
        if not worker_id:
            raise AnnotationError("worker id required", http_status=422)
        if (worker_id, hit_id) not in self.store.assignments:
            raise AnnotationError(f"hit {hit_id!r} not assigned to worker {worker_id!r}", http_status=403)

        if choice != NONE_CHOICE:
            if not isinstance(choice, int) or isinstance(choice, bool):
                raise AnnotationError(f"choice must be an integer >= 2 or {NONE_CHOICE!r}")
            if choice == 1:
                raise AnnotationError("the opening sentence cannot be selected")
            n = len(self.documents[document_id].sentences)
            if not 2 <= choice <= n:
                raise AnnotationError(f"choice {choice} out of range 2..{n}")

        for a in self.store.annotations:
            if a.worker_id == worker_id and a.hit_id == hit_id and a.document_id == document_id:
                raise AnnotationError("duplicate annotation", http_status=409)

        ann = Annotation(hit_id, document_id, worker_id, choice, time.time())
        self.store.record_annotation(ann)
        return ann

    # -- export and aggregation ---------------------------------------------

    def export_rows(self) -> list[dict]:
        """Full annotation log with gold joined server-side."""
        rows = []
        for a in self.store.snapshot_annotations():
            inst = self.documents[a.document_id]
            rows.append(
                {
                    "hit_id": a.hit_id,
                    "document_id": a.document_id,
                    "worker_id": a.worker_id,
                    "choice": a.choice,
                    "timestamp": a.timestamp,
                    "is_control": a.document_id in self.control_gold,
                    "is_filler": (a.hit_id, a.document_id) in self.filler_keys,
                    "gold_label": inst.label,
                    "gold_intruder_index": inst.intruder_index,
                }
            )
        return rows

    def aggregate(self) -> dict:
        agg = aggregate_annotations(
            self.store.snapshot_annotations(),
            min_agreement=self.min_agreement,
            filler_keys=self.filler_keys,
            control_gold=self.control_gold,
            expected_per_doc=self.min_agreement,
        )
        voted = {l.document_id for l in agg["labels"]}
        unseen = [
            d for d in sorted(self.documents)
            if d not in voted and d not in self.control_gold
        ]
        agg["under_annotated"] = sorted(set(agg["under_annotated"]) | set(unseen))
        return agg


def select_controls(instances: Sequence[DatasetInstance], n: int) -> list[DatasetInstance]:
    """Easy controls: train-split intruders with the least similar donors."""
    pool = [i for i in instances if i.incoherent and i.split == "train"]
    pool.sort(key=lambda i: (i.provenance.similarity_to_replaced, i.instance_id))
    return pool[:n]


# ---------------------------------------------------------------------------
# HTTP API
# ---------------------------------------------------------------------------

def create_app(service: AnnotationService, export_token: str | None = None, ui_dir: str | Path | None = None):
    from fastapi import Body, FastAPI, Header, HTTPException
    from fastapi.responses import JSONResponse, PlainTextResponse

    app = FastAPI(title="annotation service")
    token = export_token or secrets.token_hex(16)
    app.state.export_token = token

    @app.get("/api/hit")
    def get_hit(worker: str = ""):
        try:
            view = service.next_hit(worker)
        except AnnotationError as exc:
            raise HTTPException(exc.http_status, str(exc))
        if view is None:
            return JSONResponse({"done": True})
        return view

    @app.post("/api/annotation")
    def post_annotation(body: dict = Body(...)):
        try:
            ann = service.submit(
                hit_id=body.get("hit_id", ""),
                document_id=body.get("document_id", ""),
                worker_id=body.get("worker_id", ""),
                choice=body.get("choice"),
            )
        except AnnotationError as exc:
            raise HTTPException(exc.http_status, str(exc))
        return {"accepted": True, "document_id": ann.document_id}

    @app.get("/api/export")
    def export(token: str = "", x_export_token: str | None = Header(default=None)):
        supplied = token or x_export_token
        if supplied != app.state.export_token:
            raise HTTPException(403, "export requires a valid token")
        lines = "\n".join(json.dumps(r, sort_keys=True) for r in service.export_rows())
        return PlainTextResponse(lines + ("\n" if lines else ""), media_type="application/x-ndjson")

    @app.get("/api/aggregate")
    def aggregate():
        agg = service.aggregate()
        return {
            "labels": [asdict(l) for l in agg["labels"]],
            "worker_quality": agg["worker_quality"],
            "under_annotated": agg["under_annotated"],
            "retained_fraction": agg["retained_fraction"],
        }

    if ui_dir is not None and Path(ui_dir).is_dir():
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=str(ui_dir), html=True), name="ui")
    return app
