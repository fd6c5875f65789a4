"""Corpus ingestion: sentence segmentation, length windowing, version filter.

Raw records (JSONL or plain-text story files) become canonical documents of
3..8 sentences. All per-record randomness is derived from
``derive_seed(global_seed, "ingest", record_id)`` so ingestion output is
independent of record order and worker count.
"""
from __future__ import annotations

import json
import random
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Iterator

from . import retrieval
from .textutil import derive_seed

MIN_SENTENCES = 3
MAX_SENTENCES = 8
DEFAULT_VERSION_THRESHOLD = 0.72

SOURCES = ("wiki-like", "news-like", "other")


class IngestError(ValueError):
    pass


class SegmentationError(ValueError):
    pass


@dataclass(frozen=True)
class RawRecord:
    id: str
    body: str
    title: str | None = None
    snapshot_tag: str | None = None


@dataclass(frozen=True)
class Sentence:
    index: int  # 1-based position within the document
    text: str
    token_count: int


@dataclass(frozen=True)
class Document:
    id: str
    source: str
    sentences: tuple[Sentence, ...]
    token_total: int

    def __post_init__(self):
        if self.source not in SOURCES:
            raise ValueError(f"unknown source {self.source!r}")
        if not (MIN_SENTENCES <= len(self.sentences) <= MAX_SENTENCES):
            raise ValueError(
                f"document {self.id!r} has {len(self.sentences)} sentences, "
                f"expected {MIN_SENTENCES}..{MAX_SENTENCES}"
            )
        for pos, sent in enumerate(self.sentences, start=1):
            if sent.index != pos:
                raise ValueError(f"document {self.id!r}: sentence indices not contiguous")
        if self.token_total != sum(s.token_count for s in self.sentences):
            raise ValueError(f"document {self.id!r}: token_total inconsistent")

    @property
    def text(self) -> str:
        return " ".join(s.text for s in self.sentences)


def make_sentences(texts: Iterable[str]) -> tuple[Sentence, ...]:
    return tuple(
        Sentence(index=i, text=t, token_count=len(t.split()))
        for i, t in enumerate(texts, start=1)
    )


def document_from_texts(doc_id: str, source: str, texts: Iterable[str]) -> Document:
    sentences = make_sentences(texts)
    return Document(
        id=doc_id,
        source=source,
        sentences=sentences,
        token_total=sum(s.token_count for s in sentences),
    )


# ---------------------------------------------------------------------------
# Sentence segmentation
# ---------------------------------------------------------------------------

def _load_abbreviations() -> tuple[frozenset[str], frozenset[str]]:
    always: set[str] = set()
    numeric: set[str] = set()
    data = resources.files("benchforge.data").joinpath("abbreviations.txt").read_text("utf-8")
    for line in data.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if line.endswith("|num"):
            numeric.add(line[:-4])
        else:
            always.add(line)
    return frozenset(always), frozenset(numeric)


_ABBREV, _ABBREV_NUMERIC = _load_abbreviations()

# Terminal punctuation, optional closing quotes/brackets, whitespace, then a
# plausible sentence opener (uppercase letter, digit, or opening quote).
_BOUNDARY = re.compile(r"[.!?]+[\"'”’)\]]*\s+(?=[\"'“‘(\[]?[A-Z0-9])")
_WS = re.compile(r"\s+")


def _preceding_word(text: str, punct_start: int) -> str:
    i = punct_start
    while i > 0 and (text[i - 1].isalnum() or text[i - 1] == "."):
        i -= 1
    return text[i:punct_start]


_NEXT_WORD = re.compile(r"[\"'“‘(\[]?(\w+)")


def _is_abbreviation_boundary(text: str, match: re.Match) -> bool:
    if text[match.start()] != ".":
        return False
    word = _preceding_word(text, match.start()).lower().rstrip(".")
    if not word:
        return False
    next_char = text[match.end()] if match.end() < len(text) else ""
    if word in _ABBREV_NUMERIC and next_char.isdigit():
        return True
    if word in _ABBREV:
        return True
    # A single uppercase letter followed by a capitalised word reads as an
    # initial before a surname (John F. Kennedy); a lone letter before
    # another lone letter does not (A. B.).
    prev = text[match.start() - 1] if match.start() > 0 else ""
    before_prev = text[match.start() - 2] if match.start() > 1 else " "
    if len(word) == 1 and prev.isupper() and not before_prev.isalnum():
        nxt = _NEXT_WORD.match(text, match.end())
        return nxt is not None and len(nxt.group(1)) > 1 and nxt.group(1)[0].isupper()
    return False


def segment_sentences(body: str) -> list[Sentence]:
    """Split text into sentences on terminal punctuation.

    Boundaries need trailing whitespace plus an uppercase/quote/digit opener;
    a shipped abbreviation list and an initials rule veto false splits.
    Raises SegmentationError when nothing remains.
    """
    if not body or not body.strip():
        raise SegmentationError("empty body")
    spans: list[str] = []
    start = 0
    for m in _BOUNDARY.finditer(body):
        if _is_abbreviation_boundary(body, m):
            continue
        spans.append(body[start:m.end()])
        start = m.end()
    spans.append(body[start:])

    texts = [_WS.sub(" ", s).strip() for s in spans]
    texts = [t for t in texts if re.search(r"\w", t)]
    if not texts:
        raise SegmentationError("no sentences after segmentation")
    return list(make_sentences(texts))


# ---------------------------------------------------------------------------
# Document windowing
# ---------------------------------------------------------------------------

def _opening_paragraph(body: str) -> str:
    for block in re.split(r"\n\s*\n", body):
        if block.strip():
            return block
    return body


def make_document(record: RawRecord, policy: str, rng: random.Random) -> Document | None:
    """Window a segmented record into a 3..8 sentence document.

    wiki-like keeps the opening paragraph truncated to 8 sentences; news-like
    keeps a prefix whose length is drawn uniformly from {3..8}, clipped to the
    available sentences. Records below 3 sentences are rejected (None).
    """
    if policy not in ("wiki-like", "news-like"):
        raise ValueError(f"unknown window policy {policy!r}")
    try:
        if policy == "wiki-like":
            sentences = segment_sentences(_opening_paragraph(record.body))
            kept = sentences[:MAX_SENTENCES]
        else:
            sentences = segment_sentences(record.body)
            want = rng.randint(MIN_SENTENCES, MAX_SENTENCES)
            kept = sentences[:want]
    except SegmentationError as exc:
        raise IngestError(f"record {record.id!r}: {exc}") from exc
    if len(kept) < MIN_SENTENCES:
        return None
    return document_from_texts(record.id, policy, [s.text for s in kept])


# ---------------------------------------------------------------------------
# Version filter
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class VersionDecision:
    keep: bool
    score: float


def version_filter(
    doc: Document,
    reference: Document | None,
    index: retrieval.RetrievalIndex,
    threshold: float = DEFAULT_VERSION_THRESHOLD,
) -> VersionDecision:
    """Drop a document whose TF-IDF cosine to its paired snapshot is >= threshold."""
    if reference is None:
        raise IngestError(f"document {doc.id!r}: version filter requested but no reference given")
    score = retrieval.cosine_similarity(index, doc.text, reference.text)
    return VersionDecision(keep=score < threshold, score=score)


# ---------------------------------------------------------------------------
# Record and document I/O
# ---------------------------------------------------------------------------

_HIGHLIGHT = re.compile(r"@highlight.*?(?=@highlight|\Z)", re.DOTALL)


def strip_highlights(text: str) -> str:
    return _HIGHLIGHT.sub("", text)


def read_records_jsonl(path: str | Path) -> Iterator[RawRecord]:
    seen: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError as exc:
                raise IngestError(f"{path}:{lineno}: invalid JSON ({exc})") from exc
            rec_id = str(row.get("id", ""))
            body = row.get("text", "")
            if not rec_id:
                raise IngestError(f"{path}:{lineno}: record missing id")
            if rec_id in seen:
                raise IngestError(f"{path}:{lineno}: duplicate record id {rec_id!r}")
            seen.add(rec_id)
            if not isinstance(body, str) or not body.strip():
                raise IngestError(f"record {rec_id!r}: empty body")
            yield RawRecord(
                id=rec_id,
                body=body,
                title=row.get("title"),
                snapshot_tag=row.get("snapshot"),
            )


def read_records_stories(directory: str | Path) -> Iterator[RawRecord]:
    """One record per file; @highlight blocks are stripped before segmentation."""
    paths = sorted(Path(directory).iterdir())
    for p in paths:
        if p.is_dir():
            continue
        body = strip_highlights(p.read_text("utf-8"))
        if not body.strip():
            raise IngestError(f"record {p.stem!r}: empty body")
        yield RawRecord(id=p.stem, body=body)


def read_records(path: str | Path, fmt: str) -> Iterator[RawRecord]:
    if fmt == "jsonl":
        return read_records_jsonl(path)
    if fmt == "stories":
        return read_records_stories(path)
    raise IngestError(f"unknown input format {fmt!r}")


@dataclass
class IngestReport:
    total_records: int = 0
    emitted: int = 0
    rejected_short: int = 0
    sentence_counts: list[int] = field(default_factory=list)
    token_totals: list[int] = field(default_factory=list)


def _ingest_one(record: RawRecord, policy: str, seed: int) -> Document | None:
    rng = random.Random(derive_seed(seed, "ingest", record.id))
    return make_document(record, policy, rng)


def ingest(records: Iterable[RawRecord], source: str, seed: int,
           workers: int = 1) -> tuple[list[Document], IngestReport]:
    """Window every record; deterministic for any worker count."""
    policy = {"wiki": "wiki-like", "news": "news-like"}.get(source, source)
    records = list(records)
    report = IngestReport(total_records=len(records))

    if workers > 1:
        from multiprocessing import Pool

        with Pool(workers) as pool:
            docs = pool.starmap(_ingest_one, [(r, policy, seed) for r in records], chunksize=64)
    else:
        docs = [_ingest_one(r, policy, seed) for r in records]

    kept = sorted((d for d in docs if d is not None), key=lambda d: d.id)
    report.emitted = len(kept)
    report.rejected_short = report.total_records - report.emitted
    report.sentence_counts = [len(d.sentences) for d in kept]
    report.token_totals = [d.token_total for d in kept]
    return kept, report


def write_documents(docs: Iterable[Document], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for doc in docs:
            row = {
                "id": doc.id,
                "source": doc.source,
                "sentences": [s.text for s in doc.sentences],
            }
            fh.write(json.dumps(row, sort_keys=True) + "\n")


def read_documents(path: str | Path) -> list[Document]:
    docs: list[Document] = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            row = json.loads(line)
            docs.append(document_from_texts(row["id"], row["source"], row["sentences"]))
    return docs
