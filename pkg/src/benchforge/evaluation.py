"""Two-level metrics, the external-adapter wire protocol, and probe deltas.

A document counts correct when its predicted coherence status matches the
label: any positive sentence prediction marks the document incoherent, so a
positive at the wrong position still scores correct at the document level.
Sentence-level precision/recall/F1 are over the intruder class across all
non-opening sentences.

Adapter wire protocol (line-delimited JSON, identical bodies over HTTP POST
/score):
    request:  {"instance_id": str, "sentences": [str], "candidate_index": int}
    response: {"instance_id": str, "candidate_index": int, "score": float}
In standalone mode the request's sentences array holds only the candidate
sentence; candidate_index keeps its in-document value for keying.
"""
from __future__ import annotations

import json
import queue
import random
import shlex
import subprocess
import threading
from dataclasses import dataclass
from typing import Iterable, Protocol, Sequence

from .dataio import DatasetInstance
from .textutil import derive_seed

PredictionSet = dict[str, dict[int, bool]]

MODES = ("context", "standalone")


class EvaluationError(ValueError):
    pass


class AdapterError(RuntimeError):
    pass


@dataclass(frozen=True)
class MetricsReport:
    doc_total: int
    doc_correct: int
    doc_accuracy: float
    tp: int
    fp: int
    fn: int
    tn: int
    sentence_precision: float
    sentence_recall: float
    sentence_f1: float

    def rows(self) -> list[tuple[str, object]]:
        return [
            ("documents", self.doc_total),
            ("documents_correct", self.doc_correct),
            ("doc_accuracy", round(self.doc_accuracy, 6)),
            ("sentence_tp", self.tp),
            ("sentence_fp", self.fp),
            ("sentence_fn", self.fn),
            ("sentence_tn", self.tn),
            ("sentence_precision", round(self.sentence_precision, 6)),
            ("sentence_recall", round(self.sentence_recall, 6)),
            ("sentence_f1", round(self.sentence_f1, 6)),
        ]


@dataclass(frozen=True)
class DeltaReport:
    base_f1: float  # percentage points
    probed_f1: float
    delta_f1: float
    instances: int

    def rows(self) -> list[tuple[str, object]]:
        return [
            ("delta_instances", self.instances),
            ("base_f1_points", round(self.base_f1, 4)),
            ("probed_f1_points", round(self.probed_f1, 4)),
            ("delta_f1_points", round(self.delta_f1, 4)),
        ]


def _f1(precision: float, recall: float) -> float:
    return 0.0 if precision + recall == 0.0 else 2 * precision * recall / (precision + recall)


def check_coverage(instances: Sequence[DatasetInstance], predictions: PredictionSet) -> None:
    missing: list[tuple[str, int]] = []
    extra: list[tuple[str, int]] = []
    ids = set()
    for inst in instances:
        ids.add(inst.instance_id)
        per_doc = predictions.get(inst.instance_id, {})
        for idx in inst.non_opening_indices():
            if idx not in per_doc:
                missing.append((inst.instance_id, idx))
        for idx in per_doc:
            if idx == 1 or idx not in inst.non_opening_indices():
                extra.append((inst.instance_id, idx))
    extra.extend((i, -1) for i in predictions if i not in ids)
    if missing or extra:
        parts = []
        if missing:
            parts.append(f"missing predictions for {missing[:10]}{'...' if len(missing) > 10 else ''}")
        if extra:
            parts.append(f"unexpected predictions for {extra[:10]}{'...' if len(extra) > 10 else ''}")
        raise EvaluationError("; ".join(parts))


def evaluate(instances: Sequence[DatasetInstance], predictions: PredictionSet) -> MetricsReport:
    check_coverage(instances, predictions)
    doc_correct = 0
    tp = fp = fn = tn = 0
    for inst in instances:
        per_doc = predictions[inst.instance_id]
        any_positive = any(per_doc[idx] for idx in inst.non_opening_indices())
        if any_positive == inst.incoherent:
            doc_correct += 1
        for idx in inst.non_opening_indices():
            actual = idx == inst.intruder_index
            pred = per_doc[idx]
            if actual and pred:
                tp += 1
            elif not actual and pred:
                fp += 1
            elif actual and not pred:
                fn += 1
            else:
                tn += 1
    total = len(instances)
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    return MetricsReport(
        doc_total=total,
        doc_correct=doc_correct,
        doc_accuracy=doc_correct / total if total else 0.0,
        tp=tp, fp=fp, fn=fn, tn=tn,
        sentence_precision=precision,
        sentence_recall=recall,
        sentence_f1=_f1(precision, recall),
    )


def delta_f1(
    base_instances: Sequence[DatasetInstance],
    probed_instances: Sequence[DatasetInstance],
    predictions_base: PredictionSet,
    predictions_probed: PredictionSet,
) -> DeltaReport:
    """Signed F1 change from probing, over the matched incoherent subset."""
    base_by_id = {i.instance_id: i for i in base_instances}
    matched = []
    for probed in probed_instances:
        base = base_by_id.get(probed.instance_id)
        if base is None or not base.incoherent:
            raise EvaluationError(
                f"probed instance {probed.instance_id!r} has no incoherent base counterpart"
            )
        if base.intruder_index != probed.intruder_index:
            raise EvaluationError(f"intruder index mismatch for {probed.instance_id!r}")
        matched.append((base, probed))
    if not matched:
        raise EvaluationError("no probed instances to compare")
    base_subset = [b for b, _ in matched]
    probed_subset = [p for _, p in matched]
    base_metrics = evaluate(base_subset, {i.instance_id: predictions_base[i.instance_id] for i in base_subset})
    probed_metrics = evaluate(probed_subset, {i.instance_id: predictions_probed[i.instance_id] for i in probed_subset})
    base_pts = 100.0 * base_metrics.sentence_f1
    probed_pts = 100.0 * probed_metrics.sentence_f1
    return DeltaReport(base_pts, probed_pts, probed_pts - base_pts, len(matched))


# ---------------------------------------------------------------------------
# Adapters
# ---------------------------------------------------------------------------

class Adapter(Protocol):
    def score_batch(self, requests: list[dict]) -> list[dict]:
        """Return one response per request, any order, keyed by ids."""


class MajorityAdapter:
    """Scores every sentence 0: the all-negative baseline."""

    def score_batch(self, requests: list[dict]) -> list[dict]:
        return [
            {"instance_id": r["instance_id"], "candidate_index": r["candidate_index"], "score": 0.0}
            for r in requests
        ]


class OracleAdapter:
    """Reads gold intruder positions; upper-bound harness only."""

    def __init__(self, instances: Iterable[DatasetInstance]):
        self._gold = {i.instance_id: i.intruder_index for i in instances}

    def score_batch(self, requests: list[dict]) -> list[dict]:
        out = []
        for r in requests:
            gold = self._gold.get(r["instance_id"])
            score = 1.0 if gold is not None and gold == r["candidate_index"] else 0.0
            out.append({"instance_id": r["instance_id"], "candidate_index": r["candidate_index"], "score": score})
        return out


class RandomAdapter:
    """Uniform scores in [0, 1); per-request derivation keeps it order-free."""

    def __init__(self, seed: int):
        self.seed = seed

    def score_batch(self, requests: list[dict]) -> list[dict]:
        out = []
        for r in requests:
            rng = random.Random(derive_seed(self.seed, "random-adapter", r["instance_id"], str(r["candidate_index"])))
            out.append({"instance_id": r["instance_id"], "candidate_index": r["candidate_index"], "score": rng.random()})
        return out


class ExecAdapter:
    """Child process speaking line-delimited JSON over stdin/stdout."""

    def __init__(self, command: str, timeout: float = 60.0):
        self.command = command
        self.timeout = timeout
        self._proc: subprocess.Popen | None = None
        self._lines: queue.Queue | None = None

    def _ensure(self) -> subprocess.Popen:
        if self._proc is None or self._proc.poll() is not None:
            self._proc = subprocess.Popen(
                shlex.split(self.command),
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                text=True,
            )
            # blocking readline in a thread; selecting on the pipe misses
            # lines already pulled into the text wrapper's buffer
            self._lines = queue.Queue()
            threading.Thread(
                target=self._pump, args=(self._proc, self._lines), daemon=True
            ).start()
        return self._proc

    @staticmethod
    def _pump(proc: subprocess.Popen, lines: queue.Queue) -> None:
        for line in proc.stdout:
            lines.put(line)
        lines.put(None)

    def _read_line(self) -> str:
        try:
            line = self._lines.get(timeout=self.timeout)
        except queue.Empty:
            raise TimeoutError("adapter read timed out")
        if line is None:
            raise AdapterError(f"adapter process exited early: {self.command!r}")
        return line

    def _round_trip(self, requests: list[dict]) -> list[dict]:
        proc = self._ensure()
        for req in requests:
            proc.stdin.write(json.dumps(req, sort_keys=True) + "\n")
        proc.stdin.flush()
        return [json.loads(self._read_line()) for _ in requests]

    def score_batch(self, requests: list[dict]) -> list[dict]:
        try:
            return self._round_trip(requests)
        except TimeoutError:
            self.close()  # retry once against a fresh process
            try:
                return self._round_trip(requests)
            except TimeoutError as exc:
                raise AdapterError(
                    f"adapter timed out twice; first pending request: "
                    f"{json.dumps(requests[0], sort_keys=True)}"
                ) from exc

    def close(self) -> None:
        if self._proc is not None:
            if self._proc.stdin:
                self._proc.stdin.close()
            self._proc.terminate()
            self._proc.wait(timeout=5)
            self._proc = None


class HttpAdapter:
    """POSTs each request body to <base_url>/score."""

    def __init__(self, base_url: str, timeout: float = 60.0):
        import httpx

        self.base_url = base_url.rstrip("/")
        self._client = httpx.Client(timeout=timeout)

    def score_batch(self, requests: list[dict]) -> list[dict]:
        import httpx

        out = []
        for req in requests:
            url = f"{self.base_url}/score"
            try:
                resp = self._client.post(url, json=req)
            except httpx.TimeoutException:
                try:
                    resp = self._client.post(url, json=req)  # retry once
                except httpx.TimeoutException as exc:
                    raise AdapterError(
                        f"adapter timed out twice on {json.dumps(req, sort_keys=True)}"
                    ) from exc
            if resp.status_code != 200:
                raise AdapterError(f"adapter returned HTTP {resp.status_code} for {json.dumps(req, sort_keys=True)}")
            out.append(resp.json())
        return out

    def close(self) -> None:
        self._client.close()


class AdapterScorer:
    """Difficulty scorer backed by a wire adapter, for synthesis filtering."""

    def __init__(self, adapter: Adapter):
        self.adapter = adapter

    def score(self, sentences: Sequence[str], candidate_index: int) -> float:
        req = {
            "instance_id": "candidate",
            "sentences": list(sentences),
            "candidate_index": candidate_index,
        }
        responses = self.adapter.score_batch([req])
        if len(responses) != 1:
            raise AdapterError(f"expected one response, got {len(responses)}")
        return _validate_response(responses[0], req)


def make_adapter(spec: str, instances: Sequence[DatasetInstance]) -> Adapter:
    if spec == "majority":
        return MajorityAdapter()
    if spec == "oracle":
        return OracleAdapter(instances)
    if spec.startswith("random:"):
        return RandomAdapter(int(spec.split(":", 1)[1]))
    if spec.startswith("exec:"):
        return ExecAdapter(spec.split(":", 1)[1])
    if spec.startswith("http:") or spec.startswith("https:"):
        return HttpAdapter(spec)
    raise EvaluationError(f"unknown adapter spec {spec!r}")


def _validate_response(resp: dict, req: dict) -> float:
    try:
        score = resp["score"]
    except (TypeError, KeyError):
        raise AdapterError(f"malformed adapter response {resp!r} for request {json.dumps(req, sort_keys=True)}")
    if not isinstance(score, (int, float)) or isinstance(score, bool) or not 0.0 <= float(score) <= 1.0:
        raise AdapterError(f"non-probability score {score!r} for request {json.dumps(req, sort_keys=True)}")
    return float(score)


def run_adapter(
    instances: Sequence[DatasetInstance],
    adapter: Adapter,
    mode: str = "context",
    threshold: float = 0.5,
    batch_size: int = 64,
) -> PredictionSet:
    """Score every non-opening sentence in deterministic (id, index) order."""
    if mode not in MODES:
        raise EvaluationError(f"unknown adapter mode {mode!r}")
    requests = []
    for inst in sorted(instances, key=lambda i: i.instance_id):
        sentences = list(inst.sentences)
        for idx in inst.non_opening_indices():
            payload = [sentences[idx - 1]] if mode == "standalone" else sentences
            requests.append({"instance_id": inst.instance_id, "sentences": payload, "candidate_index": idx})

    predictions: PredictionSet = {}
    for start in range(0, len(requests), batch_size):
        batch = requests[start:start + batch_size]
        responses = adapter.score_batch(batch)
        if len(responses) != len(batch):
            raise AdapterError(f"adapter returned {len(responses)} responses for {len(batch)} requests")
        by_key = {}
        for resp in responses:
            if not isinstance(resp, dict):
                raise AdapterError(f"malformed adapter response {resp!r}")
            by_key[(resp.get("instance_id"), resp.get("candidate_index"))] = resp
        for req in batch:
            key = (req["instance_id"], req["candidate_index"])
            if key not in by_key:
                raise AdapterError(f"no response for request {json.dumps(req, sort_keys=True)}")
            score = _validate_response(by_key[key], req)
            predictions.setdefault(req["instance_id"], {})[req["candidate_index"]] = score >= threshold
    return predictions
