"""Incoherent-document synthesis with difficulty filtering.

For each document designated for intrusion: retrieve the top-k most similar
same-domain documents, pick one non-opening sentence to replace, draw one
non-opening donor sentence per retrieved document, drop donors whose cosine
to the replaced sentence reaches the similarity cap, then choose among the
survivors -- preferring candidates a difficulty scorer fails to flag.
Designated documents left with no surviving candidate are emitted coherent,
which is why the incoherent fraction lands below one half.

All randomness is derived per document id, so output is independent of doc
order and worker count.
"""
from __future__ import annotations

import random
import statistics
from dataclasses import dataclass, field
from typing import Callable, Mapping, Protocol, Sequence

from . import retrieval
from .classifiers import SparseLogisticRegression, TfidfFeaturizer
from .corpus import Document, version_filter
from .dataio import (
    LABEL_COHERENT,
    LABEL_INCOHERENT,
    DatasetInstance,
    Provenance,
)
from .textutil import derive_seed

DEFAULT_SIMILARITY_CAP = 0.6
DEFAULT_TOP_K = 10
DEFAULT_EASY_THRESHOLD = 0.5
STRATEGIES = ("document", "sentence", "2hop")


class SynthesisError(RuntimeError):
    pass


class DifficultyScorer(Protocol):
    def score(self, sentences: Sequence[str], candidate_index: int) -> float:
        """Probability that the candidate at candidate_index is detected."""


@dataclass(frozen=True)
class IntruderCandidate:
    donor_doc_id: str
    donor_sentence_index: int  # >= 2: non-opening donor position
    text: str
    similarity_to_replaced: float
    difficulty: float | None = None


@dataclass(frozen=True)
class CandidateSet:
    replaced_index: int
    replaced_text: str
    candidates: tuple[IntruderCandidate, ...]


def _retrieve(
    doc: Document,
    index: retrieval.RetrievalIndex,
    corpus: Mapping[str, Document],
    top_k: int,
    strategy: str,
    replaced_text: str,
) -> list[retrieval.RetrievalResult]:
    if strategy == "document":
        return retrieval.query_top_k(index, doc, top_k)
    if strategy == "sentence":
        return retrieval.query_top_k_text(index, replaced_text, top_k, exclude_id=doc.id)
    if strategy == "2hop":
        best: dict[str, float] = {}
        for hop in retrieval.query_top_k(index, doc, top_k):
            hop_doc = corpus.get(hop.doc_id)
            if hop_doc is None:
                continue
            for res in retrieval.query_top_k(index, hop_doc, top_k):
                if res.doc_id == doc.id:
                    continue
                if res.doc_id not in best or res.score > best[res.doc_id]:
                    best[res.doc_id] = res.score
        ranked = sorted(best.items(), key=lambda kv: (-kv[1], kv[0]))
        return [retrieval.RetrievalResult(d, s) for d, s in ranked[:top_k]]
    raise SynthesisError(f"unknown strategy {strategy!r}")


def generate_candidates(
    doc: Document,
    index: retrieval.RetrievalIndex,
    corpus: Mapping[str, Document],
    rng: random.Random,
    top_k: int = DEFAULT_TOP_K,
    similarity_cap: float = DEFAULT_SIMILARITY_CAP,
    strategy: str = "document",
) -> CandidateSet:
    """Steps 1-4: retrieve donors, pick the replaced position, cap similarity."""
    n = len(doc.sentences)
    if n < 3:
        raise SynthesisError(f"document {doc.id!r} too short for synthesis")
    replaced_index = rng.randint(2, n)
    replaced_text = doc.sentences[replaced_index - 1].text

    results = _retrieve(doc, index, corpus, top_k, strategy, replaced_text)

    candidates = []
    for res in results:
        donor = corpus.get(res.doc_id)
        if donor is None:
            raise SynthesisError(f"retrieved doc {res.doc_id!r} missing from corpus")
        donor_index = rng.randint(2, len(donor.sentences))
        text = donor.sentences[donor_index - 1].text
        sim = retrieval.sentence_similarity(replaced_text, text, index)
        if sim >= similarity_cap:
            continue
        candidates.append(
            IntruderCandidate(
                donor_doc_id=donor.id,
                donor_sentence_index=donor_index,
                text=text,
                similarity_to_replaced=sim,
            )
        )
    return CandidateSet(replaced_index, replaced_text, tuple(candidates))


def score_candidates(
    doc: Document,
    cand_set: CandidateSet,
    scorer: DifficultyScorer | None,
) -> CandidateSet:
    if scorer is None:
        return cand_set
    sentences = [s.text for s in doc.sentences]
    scored = []
    for cand in cand_set.candidates:
        intruded = list(sentences)
        intruded[cand_set.replaced_index - 1] = cand.text
        try:
            value = float(scorer.score(intruded, cand_set.replaced_index))
        except Exception as exc:
            raise SynthesisError(f"difficulty scorer failed on {doc.id!r}: {exc}") from exc
        if not 0.0 <= value <= 1.0:
            raise SynthesisError(f"difficulty scorer returned {value} for {doc.id!r}")
        scored.append(
            IntruderCandidate(
                donor_doc_id=cand.donor_doc_id,
                donor_sentence_index=cand.donor_sentence_index,
                text=cand.text,
                similarity_to_replaced=cand.similarity_to_replaced,
                difficulty=value,
            )
        )
    return CandidateSet(cand_set.replaced_index, cand_set.replaced_text, tuple(scored))


def select_intruder(
    candidates: Sequence[IntruderCandidate],
    easy_threshold: float,
    rng: random.Random,
) -> tuple[IntruderCandidate | None, str | None]:
    """Sample from the difficult pool when it is non-empty, else from all."""
    if not candidates:
        return None, None
    if all(c.difficulty is None for c in candidates):
        return rng.choice(list(candidates)), "all-pool"
    difficult = [c for c in candidates if c.difficulty is not None and c.difficulty < easy_threshold]
    if difficult:
        return rng.choice(difficult), "difficult-pool"
    return rng.choice(list(candidates)), "all-pool"


# ---------------------------------------------------------------------------
# Dataset-level synthesis
# ---------------------------------------------------------------------------

@dataclass
class SynthesisConfig:
    seed: int = 0
    similarity_cap: float = DEFAULT_SIMILARITY_CAP
    top_k: int = DEFAULT_TOP_K
    easy_threshold: float = DEFAULT_EASY_THRESHOLD
    test_fraction: float = 0.2
    strategy: str = "document"
    version_threshold: float = 0.72
    workers: int = 1


@dataclass
class SynthesisReport:
    total_documents: int = 0
    version_dropped: int = 0
    designated: int = 0
    incoherent: int = 0
    no_candidate: int = 0
    train_count: int = 0
    test_count: int = 0
    incoherent_fraction: float = 0.0
    mean_sentences: float = 0.0
    std_sentences: float = 0.0
    mean_tokens: float = 0.0
    std_tokens: float = 0.0
    mean_intruder_similarity: float = 0.0
    scorer: str = "none"

    def rows(self) -> list[tuple[str, object]]:
        return [
            ("total_documents", self.total_documents),
            ("version_dropped", self.version_dropped),
            ("designated_for_intrusion", self.designated),
            ("incoherent_instances", self.incoherent),
            ("designated_without_candidate", self.no_candidate),
            ("train_instances", self.train_count),
            ("test_instances", self.test_count),
            ("incoherent_fraction", round(self.incoherent_fraction, 6)),
            ("mean_sentences", round(self.mean_sentences, 3)),
            ("std_sentences", round(self.std_sentences, 3)),
            ("mean_tokens", round(self.mean_tokens, 3)),
            ("std_tokens", round(self.std_tokens, 3)),
            ("mean_intruder_similarity", round(self.mean_intruder_similarity, 6)),
            ("scorer", self.scorer),
        ]


def designate_half(doc_ids: Sequence[str], seed: int) -> set[str]:
    ids = sorted(doc_ids)
    rng = random.Random(derive_seed(seed, "designate"))
    rng.shuffle(ids)
    return set(ids[: len(ids) // 2])


def assign_splits(docs: Sequence[Document], seed: int, test_fraction: float) -> dict[str, str]:
    """Per-source shuffled split; deterministic in the id set only."""
    split: dict[str, str] = {}
    by_source: dict[str, list[str]] = {}
    for doc in docs:
        by_source.setdefault(doc.source, []).append(doc.id)
    for source, ids in sorted(by_source.items()):
        ids = sorted(ids)
        rng = random.Random(derive_seed(seed, "split", source))
        rng.shuffle(ids)
        n_test = int(len(ids) * test_fraction)
        for i, doc_id in enumerate(ids):
            split[doc_id] = "test" if i < n_test else "train"
    return split


# Worker globals: populated before forking so Pool workers inherit them.
_CTX: dict = {}


def _synthesize_one(doc_id: str) -> DatasetInstance:
    ctx = _CTX
    doc: Document = ctx["corpus"][doc_id]
    split = ctx["split"][doc_id]
    sentences = tuple(s.text for s in doc.sentences)

    if doc_id not in ctx["designated"]:
        return DatasetInstance(doc_id, doc.source, sentences, LABEL_COHERENT, None, None, split)

    cfg: SynthesisConfig = ctx["config"]
    rng_cand = random.Random(derive_seed(cfg.seed, "cand", doc_id))
    cand_set = generate_candidates(
        doc, ctx["index"], ctx["corpus"], rng_cand,
        top_k=cfg.top_k, similarity_cap=cfg.similarity_cap, strategy=cfg.strategy,
    )
    cand_set = score_candidates(doc, cand_set, ctx["scorer"])
    rng_sel = random.Random(derive_seed(cfg.seed, "sel", doc_id))
    chosen, mode = select_intruder(cand_set.candidates, cfg.easy_threshold, rng_sel)
    if chosen is None:
        return DatasetInstance(doc_id, doc.source, sentences, LABEL_COHERENT, None, None, split)

    intruded = list(sentences)
    intruded[cand_set.replaced_index - 1] = chosen.text
    prov = Provenance(
        source_doc_id=doc_id,
        replaced_sentence_index=cand_set.replaced_index,
        replaced_text=cand_set.replaced_text,
        donor_doc_id=chosen.donor_doc_id,
        donor_sentence_index=chosen.donor_sentence_index,
        donor_text=chosen.text,
        similarity_to_replaced=chosen.similarity_to_replaced,
        difficulty=chosen.difficulty,
        filter_mode=mode,
    )
    return DatasetInstance(
        doc_id, doc.source, tuple(intruded), LABEL_INCOHERENT,
        cand_set.replaced_index, prov, split,
    )


def synthesize_dataset(
    docs: Sequence[Document],
    index: retrieval.RetrievalIndex,
    scorer: DifficultyScorer | None,
    config: SynthesisConfig,
    version_refs: Mapping[str, Document] | None = None,
    scorer_name: str = "none",
) -> tuple[list[DatasetInstance], SynthesisReport]:
    if not docs:
        raise SynthesisError("empty corpus")
    for doc in docs:
        if doc.id not in index:
            raise SynthesisError(f"document {doc.id!r} not present in the index")

    report = SynthesisReport(total_documents=len(docs), scorer=scorer_name)
    split = assign_splits(docs, config.seed, config.test_fraction)

    kept_docs = []
    for doc in sorted(docs, key=lambda d: d.id):
        if version_refs is not None and split[doc.id] == "test":
            if doc.id not in version_refs:
                raise SynthesisError(f"version filter requested but no reference for {doc.id!r}")
            decision = version_filter(doc, version_refs[doc.id], index, config.version_threshold)
            if not decision.keep:
                report.version_dropped += 1
                continue
        kept_docs.append(doc)

    designated = designate_half([d.id for d in kept_docs], config.seed)
    report.designated = len(designated)

    global _CTX
    # Donors may come from any indexed same-domain document, including
    # version-dropped ones; only kept documents are emitted as instances.
    _CTX = {
        "corpus": {d.id: d for d in docs},
        "index": index,
        "scorer": scorer,
        "config": config,
        "designated": designated,
        "split": split,
    }
    doc_ids = sorted(d.id for d in kept_docs)
    try:
        if config.workers > 1:
            from multiprocessing import Pool

            with Pool(config.workers) as pool:
                instances = pool.map(_synthesize_one, doc_ids, chunksize=64)
        else:
            instances = [_synthesize_one(d) for d in doc_ids]
    finally:
        _CTX = {}

    sims = []
    for inst in instances:
        if inst.incoherent:
            report.incoherent += 1
            sims.append(inst.provenance.similarity_to_replaced)
        if inst.split == "train":
            report.train_count += 1
        else:
            report.test_count += 1
    report.no_candidate = report.designated - report.incoherent
    report.incoherent_fraction = report.incoherent / len(instances) if instances else 0.0
    counts = [len(i.sentences) for i in instances]
    tokens = [sum(len(s.split()) for s in i.sentences) for i in instances]
    report.mean_sentences = statistics.fmean(counts)
    report.std_sentences = statistics.pstdev(counts)
    report.mean_tokens = statistics.fmean(tokens)
    report.std_tokens = statistics.pstdev(tokens)
    report.mean_intruder_similarity = statistics.fmean(sims) if sims else 0.0
    return instances, report


# ---------------------------------------------------------------------------
# Bootstrap difficulty scorer
# ---------------------------------------------------------------------------

def pair_text(sentences: Sequence[str], candidate_index: int) -> str:
    """Candidate sentence concatenated with its whole document."""
    return sentences[candidate_index - 1] + " " + " ".join(sentences)


class BootstrapScorer:
    """Difficulty scorer trained on a no-filter synthesis pass."""

    def __init__(self, featurizer: TfidfFeaturizer, model: SparseLogisticRegression):
        self.featurizer = featurizer
        self.model = model

    def score(self, sentences: Sequence[str], candidate_index: int) -> float:
        return self.model.predict_proba(self.featurizer.transform(pair_text(sentences, candidate_index)))


def train_bootstrap_scorer(
    instances: Sequence[DatasetInstance],
    seed: int,
    num_bins: int = retrieval.DEFAULT_NUM_BINS,
) -> BootstrapScorer:
    texts, labels = [], []
    for inst in sorted(instances, key=lambda i: i.instance_id):
        if inst.split != "train":
            continue
        for idx in inst.non_opening_indices():
            texts.append(pair_text(inst.sentences, idx))
            labels.append(1 if idx == inst.intruder_index else 0)
    featurizer = TfidfFeaturizer(num_bins).fit(texts)
    model = SparseLogisticRegression(seed=derive_seed(seed, "bootstrap") & 0xFFFFFFFF)
    model.fit([featurizer.transform(t) for t in texts], labels)
    return BootstrapScorer(featurizer, model)


def synthesize_with_bootstrap(
    docs: Sequence[Document],
    index: retrieval.RetrievalIndex,
    config: SynthesisConfig,
    version_refs: Mapping[str, Document] | None = None,
) -> tuple[list[DatasetInstance], SynthesisReport]:
    """Two passes: synthesize unfiltered, train the detector, re-synthesize."""
    pass1, _ = synthesize_dataset(docs, index, None, config, version_refs, scorer_name="none")
    scorer = train_bootstrap_scorer(pass1, config.seed, index.num_bins)
    return synthesize_dataset(docs, index, scorer, config, version_refs, scorer_name="bootstrap")
