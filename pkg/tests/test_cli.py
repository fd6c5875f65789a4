import json
from pathlib import Path

import pytest

from benchforge.cli import main
from benchforge.config import ConfigError, PipelineConfig, load_config
from benchforge.dataio import read_instances
from benchforge.reporting import read_report


def run(argv):
    return main(argv)


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """demo -> ingest -> index once; reused by the downstream stage tests."""
    ws = tmp_path_factory.mktemp("cli")
    assert run(["demo", "--docs", "120", "--topics", "6", "--seed", "9",
                "--out", str(ws / "records.jsonl")]) == 0
    assert run(["ingest", "--input", str(ws / "records.jsonl"), "--source", "wiki",
                "--seed", "9", "--out", str(ws / "corpus.jsonl")]) == 0
    assert run(["index", "--corpus", str(ws / "corpus.jsonl"), "--bins", "20",
                "--out", str(ws / "index.jsonl")]) == 0
    assert run(["synthesize", "--corpus", str(ws / "corpus.jsonl"),
                "--index", str(ws / "index.jsonl"), "--scorer", "none",
                "--seed", "9", "--test-frac", "0.25",
                "--out", str(ws / "dataset.jsonl")]) == 0
    return ws


def test_usage_error_exit_code():
    with pytest.raises(SystemExit) as exc:
        run(["not-a-stage"])
    assert exc.value.code == 2


def test_ingest_writes_report_and_figures(workspace):
    report = read_report(workspace / "corpus.jsonl.report.tsv")
    assert report["records_read"] == "120"
    assert "config_hash" in report and report["seed"] == "9"
    assert (workspace / "corpus.jsonl.report_sentences.png").exists()
    assert (workspace / "corpus.jsonl.report_tokens.png").exists()


def test_index_report(workspace):
    report = read_report(workspace / "index.jsonl.report.tsv")
    assert report["num_bins"] == str(2 ** 20)
    assert (workspace / "index.jsonl.report_df.png").exists()


def test_synthesize_output_and_report(workspace):
    instances = read_instances(workspace / "dataset.jsonl")
    assert len(instances) == 120
    report = read_report(workspace / "dataset.jsonl.report.tsv")
    assert float(report["incoherent_fraction"]) <= 0.5
    assert (workspace / "dataset.jsonl.report_sentences.png").exists()
    assert (workspace / "dataset.jsonl.report_labels.png").exists()


def test_audit_stage(workspace):
    report_path = workspace / "audit.tsv"
    assert run(["audit", "--dataset", str(workspace / "dataset.jsonl"),
                "--seed", "9", "--report", str(report_path)]) == 0
    report = read_report(report_path)
    assert report["verdict"] in ("clean", "suspect")
    assert (workspace / "audit_scores.png").exists()


def test_probe_stage_single_phenomenon(workspace):
    out = workspace / "probes.gender-only.jsonl"
    assert run(["probe", "--dataset", str(workspace / "dataset.jsonl"),
                "--phenomenon", "gender", "--n", "10", "--seed", "9",
                "--out", str(out)]) == 0
    probed = read_instances(out)
    assert probed
    assert all(p.probe["phenomenon"] == "gender" for p in probed)
    assert all(p.incoherent for p in probed)


def test_probe_stage_all_phenomena(workspace):
    out = workspace / "probes.jsonl"
    assert run(["probe", "--dataset", str(workspace / "dataset.jsonl"),
                "--phenomenon", "all", "--n", "5", "--seed", "9",
                "--out", str(out)]) == 0
    for name in ("gender", "number", "negation"):
        path = workspace / f"probes.{name}.jsonl"
        assert path.exists(), name


def test_eval_stage_majority_and_oracle(workspace):
    report_path = workspace / "eval-majority.tsv"
    assert run(["eval", "--dataset", str(workspace / "dataset.jsonl"),
                "--adapter", "majority", "--mode", "context",
                "--seed", "9", "--report", str(report_path)]) == 0
    report = read_report(report_path)
    instances = read_instances(workspace / "dataset.jsonl")
    coherent = sum(not i.incoherent for i in instances) / len(instances)
    assert float(report["doc_accuracy"]) == pytest.approx(coherent)
    assert float(report["sentence_f1"]) == 0.0

    report_path = workspace / "eval-oracle.tsv"
    assert run(["eval", "--dataset", str(workspace / "dataset.jsonl"),
                "--adapter", "oracle", "--seed", "9",
                "--predictions-out", str(workspace / "preds.jsonl"),
                "--report", str(report_path)]) == 0
    report = read_report(report_path)
    assert float(report["doc_accuracy"]) == 1.0
    assert float(report["sentence_f1"]) == 1.0
    preds = [json.loads(l) for l in (workspace / "preds.jsonl").read_text().splitlines()]
    assert all(p["candidate_index"] >= 2 for p in preds)


def test_eval_delta_against_base(workspace):
    probes_path = workspace / "probes.gender.jsonl"
    report_path = workspace / "eval-delta.tsv"
    assert run(["eval", "--dataset", str(probes_path),
                "--base-dataset", str(workspace / "dataset.jsonl"),
                "--adapter", "oracle", "--seed", "9",
                "--report", str(report_path)]) == 0
    report = read_report(report_path)
    assert float(report["delta_f1_points"]) == 0.0


def test_aggregate_stage(workspace, tmp_path):
    rows = []
    for i in range(3):
        for w, choice in enumerate([3, 3, 3, "NONE", 2]):
            rows.append({"hit_id": "h0", "document_id": f"doc-{i}", "worker_id": f"w{w}",
                         "choice": choice})
    ann_path = tmp_path / "annotations.jsonl"
    ann_path.write_text("".join(json.dumps(r) + "\n" for r in rows))
    out = tmp_path / "labels.jsonl"
    assert run(["aggregate", "--annotations", str(ann_path), "--out", str(out),
                "--seed", "9"]) == 0
    labels = [json.loads(l) for l in out.read_text().splitlines()]
    assert len(labels) == 3
    assert all(l["majority_choice"] == 3 and l["retained"] for l in labels)
    assert (tmp_path / "labels.jsonl.report_agreement.png").exists()


def test_stage_failure_exit_code(tmp_path):
    assert run(["ingest", "--input", str(tmp_path / "missing.jsonl"),
                "--out", str(tmp_path / "c.jsonl"), "--seed", "1"]) == 1


def test_failure_leaves_partial_only(tmp_path):
    bad = tmp_path / "bad.jsonl"
    bad.write_text('{"id": "a", "text": "Valid one. Valid two. Valid three."}\nnot json\n')
    out = tmp_path / "corpus.jsonl"
    assert run(["ingest", "--input", str(bad), "--out", str(out), "--seed", "1"]) == 1
    assert not out.exists()


# ---------------------------------------------------------------------------
# pipeline
# ---------------------------------------------------------------------------

def _write_config(path: Path, workdir: Path, seed=9) -> Path:
    cfg = path
    cfg.write_text(
        f"""
# pipeline configuration
global_seed = {seed}
num_bins = {2 ** 20}
test_fraction = 0.25
input = {workdir / 'records.jsonl'}
source = wiki
demo_docs = 120
demo_topics = 6
corpus = {workdir / 'corpus.jsonl'}
index = {workdir / 'index.jsonl'}
dataset = {workdir / 'dataset.jsonl'}
scorer = none
probes_out = {workdir / 'probes.jsonl'}
phenomenon = gender
probe_n = 10
audit_report = {workdir / 'audit.tsv'}
adapter = majority
eval_report = {workdir / 'eval.tsv'}
""".strip()
    )
    return cfg


def _run_pipeline_into(tmpdir: Path) -> None:
    cfg = _write_config(tmpdir / "forge.cfg", tmpdir)
    rc = run(["pipeline", "--config", str(cfg),
              "--stages", "demo,ingest,index,synthesize,probe,audit,eval"])
    assert rc == 0


def test_pipeline_end_to_end_and_byte_identical_rerun(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    a.mkdir(), b.mkdir()
    _run_pipeline_into(a)
    _run_pipeline_into(b)
    audit_report = read_report(a / "audit.tsv")
    assert audit_report["verdict"] == "clean"
    for name in ("corpus.jsonl", "index.jsonl", "dataset.jsonl", "probes.jsonl",
                 "audit.tsv", "eval.tsv", "dataset.jsonl.report.tsv"):
        fa, fb = (a / name).read_bytes(), (b / name).read_bytes()
        assert fa == fb, f"{name} differs between reruns"


def test_pipeline_unknown_stage_usage_error(tmp_path):
    cfg = _write_config(tmp_path / "forge.cfg", tmp_path)
    with pytest.raises(SystemExit) as exc:
        run(["pipeline", "--config", str(cfg), "--stages", "ingest,transmogrify"])
    assert exc.value.code == 2


def test_pipeline_serve_refused(tmp_path):
    cfg = _write_config(tmp_path / "forge.cfg", tmp_path)
    with pytest.raises(SystemExit) as exc:
        run(["pipeline", "--config", str(cfg), "--stages", "serve"])
    assert exc.value.code == 2


def test_pipeline_failure_names_stage(tmp_path, capsys):
    cfg = _write_config(tmp_path / "forge.cfg", tmp_path)
    rc = run(["pipeline", "--config", str(cfg), "--stages", "ingest"])  # no demo first
    assert rc == 1
    assert "stage ingest failed" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# config
# ---------------------------------------------------------------------------

def test_config_defaults_match_protocol_constants():
    cfg = PipelineConfig()
    assert cfg.top_k == 10
    assert cfg.similarity_cap == 0.6
    assert cfg.version_threshold == 0.72
    assert cfg.easy_threshold == 0.5
    assert cfg.min_agreement == 3
    assert cfg.num_bins == 2 ** 24


def test_config_hash_stable_and_sensitive(tmp_path):
    a = PipelineConfig(global_seed=1)
    b = PipelineConfig(global_seed=1)
    c = PipelineConfig(global_seed=2)
    assert a.config_hash() == b.config_hash()
    assert a.config_hash() != c.config_hash()


def test_config_file_parsing(tmp_path):
    path = tmp_path / "forge.cfg"
    path.write_text("global_seed = 77\nsimilarity_cap = 0.4\ncustom_path = /tmp/x\n# comment\n")
    cfg = load_config(path)
    assert cfg.global_seed == 77
    assert cfg.similarity_cap == 0.4
    assert cfg.paths["custom_path"] == "/tmp/x"


def test_config_validation_errors(tmp_path):
    path = tmp_path / "forge.cfg"
    path.write_text("similarity_cap = 1.5\n")
    with pytest.raises(ConfigError):
        load_config(path)
    path.write_text("top_k zero\n")
    with pytest.raises(ConfigError):
        load_config(path)
