import sys
import time
from pathlib import Path
from types import SimpleNamespace

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from benchforge import corpus, demo, retrieval, synthesis

DESK_SEED = 2024
FIXTURE_SEED = 11


def build_corpus(n_docs: int, seed: int, n_topics: int, source: str = "wiki",
                 vocab_size: int = 40) -> list[corpus.Document]:
    records = demo.demo_records(n_docs, seed, n_topics, source, vocab_size)
    docs, _ = corpus.ingest(records, source, seed)
    return docs


@pytest.fixture(scope="session")
def fixture_docs_200() -> list[corpus.Document]:
    """200-doc retrieval fixture: 100 bases, each with a near-duplicate twin.

    Twins give every query a clearly separated top-1, so the collision-heavy
    configuration has a meaningful agreement target.
    """
    records = demo.demo_records(100, FIXTURE_SEED, n_topics=10, vocab_size=25)
    twins = [
        corpus.RawRecord(id="t" + r.id, body=r.body)
        for r in demo.perturbed_copy(records, FIXTURE_SEED + 1, rate=0.12)
    ]
    docs, _ = corpus.ingest(records + twins, "wiki", FIXTURE_SEED)
    return docs


@pytest.fixture(scope="session")
def fixture_index_200(fixture_docs_200) -> retrieval.RetrievalIndex:
    return retrieval.build_index(fixture_docs_200, 2 ** 24)


@pytest.fixture(scope="session")
def small_docs() -> list[corpus.Document]:
    return build_corpus(80, seed=5, n_topics=6)


@pytest.fixture(scope="session")
def small_index(small_docs) -> retrieval.RetrievalIndex:
    return retrieval.build_index(small_docs, 2 ** 20)


@pytest.fixture(scope="session")
def small_dataset(small_docs, small_index):
    cfg = synthesis.SynthesisConfig(seed=5, test_fraction=0.25)
    instances, _ = synthesis.synthesize_dataset(small_docs, small_index, None, cfg)
    return instances


@pytest.fixture(scope="session")
def desk_pipeline():
    """The 2,000-document desk run named by the acceptance criteria, timed
    end to end (ingest, index, two-pass synthesis)."""
    t0 = time.perf_counter()
    records = demo.demo_records(2000, DESK_SEED, n_topics=20)
    docs, _ = corpus.ingest(records, "wiki", DESK_SEED)
    index = retrieval.build_index(docs, 2 ** 24)
    cfg = synthesis.SynthesisConfig(seed=DESK_SEED, test_fraction=0.2)
    instances, report = synthesis.synthesize_with_bootstrap(docs, index, cfg)
    duration = time.perf_counter() - t0
    return SimpleNamespace(
        docs=docs, index=index, instances=instances, report=report, seconds=duration
    )


@pytest.fixture(scope="session")
def desk_corpus(desk_pipeline) -> list[corpus.Document]:
    return desk_pipeline.docs


@pytest.fixture(scope="session")
def desk_index(desk_pipeline) -> retrieval.RetrievalIndex:
    return desk_pipeline.index


@pytest.fixture(scope="session")
def desk_dataset(desk_pipeline):
    return desk_pipeline.instances
