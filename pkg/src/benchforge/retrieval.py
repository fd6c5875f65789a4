"""Hashed unigram+bigram TF-IDF vectors, inverted index, and top-k retrieval.

Features are lowercased unigrams plus adjacent bigrams hashed with FNV-1a 64
into ``num_bins`` buckets (num_bins must be a power of two). Term weights are
log-scaled (1 + log tf); the smoothed IDF log((N - df + 0.5) / (df + 0.5)),
clamped at zero, is applied when vectors are composed into scores, so cosine
similarities always land in [0, 1].
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import TYPE_CHECKING, Iterable, Mapping

from .textutil import HASH_SEED, feature_tokens, fnv1a64

if TYPE_CHECKING:  # pragma: no cover
    from .corpus import Document, Sentence

DEFAULT_NUM_BINS = 2 ** 24
FORMAT_NAME = "benchforge-index"
FORMAT_VERSION = 1

# Weighting constants recorded in the index header so a persisted index is
# self-describing.
WEIGHTING = {"tf": "1+ln(tf)", "idf": "max(0, ln((N-df+0.5)/(df+0.5)))"}

SparseVector = dict[int, float]


class IndexBuildError(ValueError):
    pass


@dataclass(frozen=True)
class RetrievalResult:
    doc_id: str
    score: float


# feature -> bin caches, shared per bin count; features repeat heavily so this
# avoids re-hashing under Zipfian text.
_BIN_CACHE: dict[int, dict[str, int]] = {}


def _require_power_of_two(num_bins: int) -> None:
    if num_bins < 2 or num_bins & (num_bins - 1):
        raise ValueError(f"num_bins must be a power of two, got {num_bins}")


def feature_strings(text: str) -> list[str]:
    """Unigram and adjacent-bigram feature strings for a text."""
    toks = feature_tokens(text)
    feats = list(toks)
    feats.extend(f"{a} {b}" for a, b in zip(toks, toks[1:]))
    return feats


def feature_bin(feature: str, num_bins: int) -> int:
    cache = _BIN_CACHE.setdefault(num_bins, {})
    b = cache.get(feature)
    if b is None:
        b = fnv1a64(feature.encode("utf-8"), HASH_SEED) & (num_bins - 1)
        cache[feature] = b
    return b


def bin_counts(text: str, num_bins: int) -> dict[int, int]:
    counts: dict[int, int] = {}
    for feat in feature_strings(text):
        b = feature_bin(feat, num_bins)
        counts[b] = counts.get(b, 0) + 1
    return counts


def vectorize(text: str, num_bins: int) -> SparseVector:
    """Log-scaled term-frequency vector; IDF is applied at composition time."""
    _require_power_of_two(num_bins)
    return {b: 1.0 + math.log(c) for b, c in bin_counts(text, num_bins).items()}


class RetrievalIndex:
    """Immutable inverted index over a document collection."""

    def __init__(self, num_bins: int, doc_counts: dict[str, dict[int, int]]):
        _require_power_of_two(num_bins)
        self.num_bins = num_bins
        self.hash_seed = HASH_SEED
        self.doc_count = len(doc_counts)
        self._doc_counts = doc_counts
        self._doc_ids = sorted(doc_counts)

        self.bin_doc_freq: dict[int, int] = {}
        for counts in doc_counts.values():
            for b in counts:
                self.bin_doc_freq[b] = self.bin_doc_freq.get(b, 0) + 1

        self._idf = {b: self._idf_value(df) for b, df in self.bin_doc_freq.items()}

        self.postings: dict[int, list[tuple[str, float]]] = {}
        self.doc_norms: dict[str, float] = {}
        for doc_id in self._doc_ids:
            sq = 0.0
            for b in sorted(doc_counts[doc_id]):
                w = 1.0 + math.log(doc_counts[doc_id][b])
                self.postings.setdefault(b, []).append((doc_id, w))
                sq += (w * self._idf[b]) ** 2
            self.doc_norms[doc_id] = math.sqrt(sq)

    def _idf_value(self, df: int) -> float:
        return max(0.0, math.log((self.doc_count - df + 0.5) / (df + 0.5)))

    def idf(self, b: int) -> float:
        return self._idf.get(b, self._idf_value(0))

    def __contains__(self, doc_id: str) -> bool:
        return doc_id in self._doc_counts

    @property
    def doc_ids(self) -> list[str]:
        return list(self._doc_ids)

    def save(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            header = {
                "format": FORMAT_NAME,
                "version": FORMAT_VERSION,
                "num_bins": self.num_bins,
                "hash_seed": self.hash_seed,
                "weighting": WEIGHTING,
                "doc_count": self.doc_count,
            }
            fh.write(json.dumps(header, sort_keys=True) + "\n")
            for doc_id in self._doc_ids:
                counts = self._doc_counts[doc_id]
                bins = sorted(counts)
                row = {"id": doc_id, "bins": bins, "counts": [counts[b] for b in bins]}
                fh.write(json.dumps(row, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path: str) -> "RetrievalIndex":
        with open(path, encoding="utf-8") as fh:
            header = json.loads(fh.readline())
            if header.get("format") != FORMAT_NAME:
                raise IndexBuildError(f"{path}: not a retrieval index file")
            if header.get("version") != FORMAT_VERSION:
                raise IndexBuildError(f"{path}: unsupported index version {header.get('version')}")
            if header.get("hash_seed") != HASH_SEED:
                raise IndexBuildError(f"{path}: index was built with a different hash seed")
            doc_counts: dict[str, dict[int, int]] = {}
            for line in fh:
                row = json.loads(line)
                doc_counts[row["id"]] = dict(zip(row["bins"], row["counts"]))
        index = cls(header["num_bins"], doc_counts)
        if index.doc_count != header["doc_count"]:
            raise IndexBuildError(f"{path}: doc_count mismatch")
        return index


def build_index(docs: Iterable["Document"], num_bins: int = DEFAULT_NUM_BINS) -> RetrievalIndex:
    """Index documents (anything with .id and .text) by hashed features."""
    _require_power_of_two(num_bins)
    doc_counts: dict[str, dict[int, int]] = {}
    for doc in docs:
        if doc.id in doc_counts:
            raise IndexBuildError(f"duplicate document id: {doc.id!r}")
        doc_counts[doc.id] = bin_counts(doc.text, num_bins)
    return RetrievalIndex(num_bins, doc_counts)


def _weighted_norm(vec: SparseVector, index: RetrievalIndex) -> float:
    return math.sqrt(sum((w * index.idf(b)) ** 2 for b, w in vec.items()))


def query_top_k(index: RetrievalIndex, query_doc: "Document", k: int) -> list[RetrievalResult]:
    """Top-k cosine matches for a document, excluding the document itself.

    Returns exactly min(k, other-doc count) results: documents sharing no
    bins with the query score 0.0 and fill the tail in ascending-id order.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    return query_top_k_text(index, query_doc.text, k, exclude_id=query_doc.id)


def query_top_k_text(
    index: RetrievalIndex, query_text: str, k: int, exclude_id: str | None = None
) -> list[RetrievalResult]:
    qvec = vectorize(query_text, index.num_bins)
    qnorm = _weighted_norm(qvec, index)

    dots: dict[str, float] = {}
    for b in sorted(qvec):
        idf = index.idf(b)
        if idf == 0.0:
            continue
        wq = qvec[b] * idf * idf
        for doc_id, wd in index.postings.get(b, ()):
            dots[doc_id] = dots.get(doc_id, 0.0) + wq * wd
    dots.pop(exclude_id, None)

    scored: list[tuple[float, str]] = []
    zeroed: list[str] = []
    for doc_id, dot in dots.items():
        dnorm = index.doc_norms[doc_id]
        score = dot / (qnorm * dnorm) if qnorm > 0.0 and dnorm > 0.0 else 0.0
        if score > 0.0:
            scored.append((-score, doc_id))
        else:
            zeroed.append(doc_id)
    scored.sort()

    results = [RetrievalResult(doc_id, -neg) for neg, doc_id in scored[:k]]
    if len(results) < k:
        pad = sorted(zeroed + [d for d in index.doc_ids if d not in dots and d != exclude_id])
        for doc_id in pad:
            if len(results) == k:
                break
            results.append(RetrievalResult(doc_id, 0.0))
    return results


def cosine_similarity(index: RetrievalIndex, text_a: str, text_b: str) -> float:
    """IDF-weighted cosine between two texts, with the index as IDF source."""
    va = vectorize(text_a, index.num_bins)
    vb = vectorize(text_b, index.num_bins)
    na = _weighted_norm(va, index)
    nb = _weighted_norm(vb, index)
    if na == 0.0 or nb == 0.0:
        return 0.0
    dot = 0.0
    for b in sorted(va):
        if b in vb:
            dot += va[b] * vb[b] * index.idf(b) ** 2
    return dot / (na * nb)


def sentence_similarity(a: "Sentence | str", b: "Sentence | str", index: RetrievalIndex) -> float:
    """Cosine between two sentences; same vectorization/IDF as doc retrieval."""
    text_a = a if isinstance(a, str) else a.text
    text_b = b if isinstance(b, str) else b.text
    return cosine_similarity(index, text_a, text_b)
