import random

import pytest

from benchforge import retrieval, synthesis
from benchforge.corpus import document_from_texts
from benchforge.dataio import write_instances
from benchforge.synthesis import (
    IntruderCandidate,
    SynthesisConfig,
    SynthesisError,
    generate_candidates,
    score_candidates,
    select_intruder,
    synthesize_dataset,
    synthesize_with_bootstrap,
    train_bootstrap_scorer,
)
from benchforge.textutil import derive_seed

from oracles import dense_pair_cosine, dense_ranking


class ConstantScorer:
    def __init__(self, value: float):
        self.value = value

    def score(self, sentences, candidate_index):
        return self.value


class BrokenScorer:
    def score(self, sentences, candidate_index):
        raise RuntimeError("model server crashed")


def _cand(text="x", sim=0.1, difficulty=None, donor="d", idx=2):
    return IntruderCandidate(donor, idx, text, sim, difficulty)


# ---------------------------------------------------------------------------
# generate_candidates
# ---------------------------------------------------------------------------

# Frozen from the dense-cosine oracle over the 80-doc fixture (seed 5):
# rank order of donors, donor sentence draws, similarities to 1e-9.
GOLDEN_DOC_ID = "wiki-00000"
GOLDEN_REPLACED_INDEX = 4
GOLDEN_CANDIDATES = [
    ("wiki-00030", 5, 0.0),
    ("wiki-00048", 6, 0.0),
    ("wiki-00024", 3, 0.0),
    ("wiki-00078", 4, 0.029019466),
    ("wiki-00054", 4, 0.0),
    ("wiki-00060", 6, 0.0),
    ("wiki-00066", 5, 0.077445688),
    ("wiki-00072", 4, 0.0),
    ("wiki-00036", 3, 0.0),
    ("wiki-00018", 5, 0.0),
]


def test_candidate_golden_matches_oracle(small_docs, small_index):
    by_id = {d.id: d for d in small_docs}
    doc = by_id[GOLDEN_DOC_ID]
    rng = random.Random(derive_seed(5, "cand", doc.id))
    got = generate_candidates(doc, small_index, by_id, rng)
    assert got.replaced_index == GOLDEN_REPLACED_INDEX
    assert [(c.donor_doc_id, c.donor_sentence_index) for c in got.candidates] == [
        (d, i) for d, i, _ in GOLDEN_CANDIDATES
    ]
    for cand, (_, _, sim) in zip(got.candidates, GOLDEN_CANDIDATES):
        assert cand.similarity_to_replaced == pytest.approx(sim, abs=1e-9)

    # independent recomputation straight from the dense oracle
    ids = [d.id for d in small_docs]
    texts = [d.text for d in small_docs]
    rng = random.Random(derive_seed(5, "cand", doc.id))
    replaced = rng.randint(2, len(doc.sentences))
    assert replaced == GOLDEN_REPLACED_INDEX
    replaced_text = doc.sentences[replaced - 1].text
    expected = []
    for donor_id in dense_ranking(ids, texts, doc.id, 10):
        donor = by_id[donor_id]
        di = rng.randint(2, len(donor.sentences))
        sim = dense_pair_cosine(replaced_text, donor.sentences[di - 1].text, texts)
        if sim < 0.6:
            expected.append((donor_id, di))
    assert [(c.donor_doc_id, c.donor_sentence_index) for c in got.candidates] == expected


def _near_duplicate_corpus():
    """Host doc plus donors whose drawn sentences nearly equal the replaced one."""
    host = document_from_texts(
        "host", "wiki-like",
        ["Opening line about the fanube project.",
         "The fanube dam crosses the remili river valley.",
         "Engineers finished the fanube dam in 1974."],
    )
    donors = []
    for i in range(4):
        donors.append(
            document_from_texts(
                f"donor-{i}", "wiki-like",
                ["Opening line about the fanube project.",
                 "The fanube dam crosses the remili river valley.",
                 "The fanube dam crosses the remili river valley."],
            )
        )
    fillers = [
        document_from_texts(
            f"filler-{i}", "wiki-like",
            [f"Unrelated subject {i} starts here alpha.",
             f"Another unrelated line {i} beta gamma.",
             f"Closing unrelated words {i} delta epsilon."],
        )
        for i in range(20)
    ]
    return [host] + donors + fillers


def test_high_similarity_candidates_removed():
    docs = _near_duplicate_corpus()
    index = retrieval.build_index(docs, 2 ** 20)
    by_id = {d.id: d for d in docs}
    host = by_id["host"]
    # force the replaced position to 2 so every donor draw is a near-duplicate
    class Fixed(random.Random):
        def randint(self, a, b):
            return 2
    got = generate_candidates(host, index, by_id, Fixed(), top_k=4, similarity_cap=0.6)
    assert got.replaced_index == 2
    assert got.candidates == ()  # all retrieved donors >= 0.6 -> empty list


def test_identical_donor_removed(small_docs, small_index):
    by_id = {d.id: d for d in small_docs}
    host = small_docs[0]
    clone = document_from_texts("clone", host.source, [s.text for s in host.sentences])
    docs = list(small_docs) + [clone]
    index = retrieval.build_index(docs, 2 ** 20)
    by_id = {d.id: d for d in docs}

    class Fixed(random.Random):
        def randint(self, a, b):
            return 3
    got = generate_candidates(host, index, by_id, Fixed(), top_k=1)
    # top-1 donor is the verbatim clone; its sentence equals the replaced one
    assert got.candidates == ()


def test_donor_positions_non_opening(small_docs, small_index):
    by_id = {d.id: d for d in small_docs}
    for doc in small_docs[:12]:
        rng = random.Random(derive_seed(5, "cand", doc.id))
        got = generate_candidates(doc, small_index, by_id, rng)
        assert got.replaced_index >= 2
        assert all(c.donor_sentence_index >= 2 for c in got.candidates)


# ---------------------------------------------------------------------------
# select_intruder
# ---------------------------------------------------------------------------

def test_difficult_pool_preferred():
    cands = [_cand("a", difficulty=0.9), _cand("b", difficulty=0.9), _cand("c", difficulty=0.1)]
    chosen, mode = select_intruder(cands, 0.5, random.Random(0))
    assert chosen.text == "c"
    assert mode == "difficult-pool"


def test_all_easy_falls_back_to_all_pool():
    cands = [_cand(t, difficulty=d) for t, d in (("a", 0.8), ("b", 0.6), ("c", 0.7))]
    seen = set()
    for seed in range(20):
        chosen, mode = select_intruder(cands, 0.5, random.Random(seed))
        assert mode == "all-pool"
        seen.add(chosen.text)
    assert seen == {"a", "b", "c"}  # uniform over all three
    a, _ = select_intruder(cands, 0.5, random.Random(7))
    b, _ = select_intruder(cands, 0.5, random.Random(7))
    assert a == b  # deterministic under seed


def test_empty_candidates_none():
    assert select_intruder([], 0.5, random.Random(0)) == (None, None)


def test_unscored_candidates_all_pool():
    cands = [_cand("a"), _cand("b")]
    chosen, mode = select_intruder(cands, 0.5, random.Random(1))
    assert mode == "all-pool"
    assert chosen in cands


def test_scorer_failure_carries_doc_id(small_docs, small_index):
    by_id = {d.id: d for d in small_docs}
    doc = small_docs[0]
    rng = random.Random(derive_seed(5, "cand", doc.id))
    cand_set = generate_candidates(doc, small_index, by_id, rng)
    with pytest.raises(SynthesisError, match=doc.id):
        score_candidates(doc, cand_set, BrokenScorer())


def test_score_range_validated(small_docs, small_index):
    by_id = {d.id: d for d in small_docs}
    doc = small_docs[0]
    rng = random.Random(derive_seed(5, "cand", doc.id))
    cand_set = generate_candidates(doc, small_index, by_id, rng)
    with pytest.raises(SynthesisError):
        score_candidates(doc, cand_set, ConstantScorer(1.5))


# ---------------------------------------------------------------------------
# synthesize_dataset
# ---------------------------------------------------------------------------

def test_dataset_invariants(small_docs, small_index, small_dataset):
    instances = small_dataset
    assert len(instances) == len(small_docs)
    incoherent = [i for i in instances if i.incoherent]
    assert incoherent, "fixture should produce intrusions"
    by_id = {d.id: d for d in small_docs}
    for inst in instances:
        assert 3 <= len(inst.sentences) <= 8
        if not inst.incoherent:
            assert inst.intruder_index is None and inst.provenance is None
            continue
        assert inst.intruder_index >= 2
        prov = inst.provenance
        # recomputed similarity stays under the cap
        sim = retrieval.sentence_similarity(prov.replaced_text, prov.donor_text, small_index)
        assert sim < 0.6
        # sentence list equals the source with exactly one non-opening substitution
        src = by_id[inst.instance_id]
        diffs = [
            k + 1
            for k, (a, b) in enumerate(zip((s.text for s in src.sentences), inst.sentences))
            if a != b
        ]
        assert diffs == [inst.intruder_index]
        assert inst.sentences[inst.intruder_index - 1] == prov.donor_text


def test_incoherent_fraction_bounded(small_dataset):
    frac = sum(i.incoherent for i in small_dataset) / len(small_dataset)
    assert frac <= 0.5


def test_always_easy_scorer_gives_exact_half(small_docs, small_index):
    cfg = SynthesisConfig(seed=5, similarity_cap=1.0, test_fraction=0.25)
    instances, report = synthesize_dataset(
        small_docs, small_index, ConstantScorer(0.9), cfg, scorer_name="constant"
    )
    assert report.no_candidate == 0
    assert report.incoherent_fraction == pytest.approx(0.5)
    assert all(
        i.provenance.filter_mode == "all-pool" for i in instances if i.incoherent
    )


def test_rerun_and_parallelism_identical(small_docs, small_index, tmp_path):
    cfg = SynthesisConfig(seed=5, test_fraction=0.25)
    a, _ = synthesize_dataset(small_docs, small_index, None, cfg)
    b, _ = synthesize_dataset(list(reversed(small_docs)), small_index, None, cfg)
    cfg_par = SynthesisConfig(seed=5, test_fraction=0.25, workers=3)
    c, _ = synthesize_dataset(small_docs, small_index, None, cfg_par)
    assert a == b == c
    p1, p2 = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    write_instances(a, p1)
    write_instances(c, p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_split_fractions(small_docs, small_dataset):
    test_count = sum(i.split == "test" for i in small_dataset)
    assert test_count == int(len(small_docs) * 0.25)


def test_empty_corpus_rejected(small_index):
    with pytest.raises(SynthesisError):
        synthesize_dataset([], small_index, None, SynthesisConfig(seed=1))


def test_corpus_index_mismatch_rejected(small_docs):
    other = retrieval.build_index(small_docs[:10], 2 ** 16)
    with pytest.raises(SynthesisError):
        synthesize_dataset(small_docs, other, None, SynthesisConfig(seed=1))


def test_version_refs_drop_near_identical(small_docs, small_index):
    refs = {}
    for d in small_docs:
        refs[d.id] = d  # identical snapshots: every test doc must drop
    cfg = SynthesisConfig(seed=5, test_fraction=0.25)
    instances, report = synthesize_dataset(small_docs, small_index, None, cfg, version_refs=refs)
    assert report.version_dropped == int(len(small_docs) * 0.25)
    assert all(i.split == "train" for i in instances)


def test_version_refs_missing_reference_errors(small_docs, small_index):
    cfg = SynthesisConfig(seed=5, test_fraction=0.25)
    with pytest.raises(SynthesisError, match="no reference"):
        synthesize_dataset(small_docs, small_index, None, cfg, version_refs={})


def test_alternative_strategies_run(small_docs, small_index):
    for strategy in ("sentence", "2hop"):
        cfg = SynthesisConfig(seed=5, test_fraction=0.25, strategy=strategy)
        instances, report = synthesize_dataset(small_docs, small_index, None, cfg)
        assert report.incoherent > 0
        for inst in instances:
            if inst.incoherent:
                assert inst.provenance.donor_doc_id != inst.instance_id


# ---------------------------------------------------------------------------
# bootstrap scorer
# ---------------------------------------------------------------------------

def test_bootstrap_two_pass(small_docs, small_index):
    cfg = SynthesisConfig(seed=5, test_fraction=0.25)
    instances, report = synthesize_with_bootstrap(small_docs, small_index, cfg)
    assert report.scorer == "bootstrap"
    incoherent = [i for i in instances if i.incoherent]
    assert incoherent
    for inst in incoherent:
        assert inst.provenance.difficulty is not None
        assert 0.0 <= inst.provenance.difficulty <= 1.0
        assert inst.provenance.filter_mode in ("difficult-pool", "all-pool")


def test_bootstrap_scorer_is_pure(small_dataset):
    scorer = train_bootstrap_scorer(small_dataset, seed=5, num_bins=2 ** 20)
    sentences = list(small_dataset[0].sentences)
    a = scorer.score(sentences, 2)
    b = scorer.score(sentences, 2)
    assert a == b
    assert 0.0 <= a <= 1.0
