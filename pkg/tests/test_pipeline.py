import sys

import numpy as np
import pytest

from evichain.corpus import make_fixture_suite
from evichain.pipeline import (
    EvidenceRecord,
    PipelineSettings,
    build_examples,
    compare_methods,
    evaluate_evidence,
    fixture_embedding_table,
    parse_method,
    read_evidence_file,
    read_predictions_file,
    run_answer,
    run_extraction,
    run_method,
    train_verifier,
    write_evidence_file,
    write_predictions_file,
)
from evichain.scorers import cosine

OVERLAP_RATIO_STUB = r"""
import json, sys
for line in sys.stdin:
    req = json.loads(line)
    q = req["query"].split()
    scores = []
    for c in req["candidates"]:
        cand = set(c.split())
        scores.append(len(set(q) & cand) / len(set(q)) if q else 0.0)
    print(json.dumps({"id": req["id"], "scores": scores}), flush=True)
"""


@pytest.fixture(scope="module")
def suite():
    passages, questions = make_fixture_suite(16, seed=21)
    table = fixture_embedding_table(passages, questions)
    return passages, questions, table


def test_parse_method():
    assert parse_method("soft_mask") == ("soft_mask", frozenset())
    assert parse_method("soft_mask:no_integration") == ("soft_mask", frozenset({"no_integration"}))
    with pytest.raises(ValueError):
        parse_method("magic")
    with pytest.raises(ValueError):
        parse_method("soft_mask:no_magic")


def test_settings_validation():
    with pytest.raises(ValueError):
        PipelineSettings(mode="nope")
    with pytest.raises(ValueError):
        PipelineSettings(ablate=frozenset({"no_everything"}))


def test_fixture_embedding_table_orthonormal_within_passage(suite):
    passages, questions, table = suite
    passage = passages[0]
    tokens = sorted({t for s in passage.sentences for t in s})
    for i, a in enumerate(tokens):
        va = table.lookup(a)
        assert np.dot(va, va) == pytest.approx(1.0)
        for b in tokens[i + 1 :]:
            assert np.dot(va, table.lookup(b)) == 0.0


def test_fixture_embedding_table_dim_check(suite):
    passages, questions, _ = suite
    with pytest.raises(ValueError):
        fixture_embedding_table(passages, questions, dim=2)


def test_evidence_file_roundtrip(tmp_path):
    records = [
        EvidenceRecord(qid="q1", option_index=0, sentence_indices=(0, 3), score=0.75),
        EvidenceRecord(qid="q0", option_index=2, sentence_indices=(1,), score=0.5),
    ]
    path = tmp_path / "evidence.jsonl"
    write_evidence_file(path, records)
    loaded = read_evidence_file(path)
    assert loaded == sorted(records, key=lambda r: (r.qid, r.option_index))
    lines = path.read_text().strip().splitlines()
    assert lines[0].startswith('{"qid": "q0"')


def test_predictions_file_roundtrip(tmp_path):
    path = tmp_path / "predictions.jsonl"
    write_predictions_file(path, {"q1": 2, "q0": 1})
    assert read_predictions_file(path) == {"q0": 1, "q1": 2}
    assert path.read_text().splitlines()[0] == '{"qid": "q0", "predicted_option": 1}'


def test_run_extraction_covers_every_option(suite):
    passages, questions, table = suite
    records = run_extraction(passages, questions, table, PipelineSettings())
    assert len(records) == 4 * len(questions)
    keys = {(r.qid, r.option_index) for r in records}
    assert keys == {(q.qid, i) for q in questions for i in range(4)}
    assert all(len(r.sentence_indices) >= 1 for r in records)


def test_run_extraction_worker_counts_agree(suite):
    passages, questions, table = suite
    one = run_extraction(passages, questions, table, PipelineSettings(workers=1))
    two = run_extraction(passages, questions, table, PipelineSettings(workers=2))
    assert one == two


def test_full_method_run_answers_correctly(suite):
    passages, questions, table = suite
    result = run_method(passages, questions, table, PipelineSettings(epochs=40))
    assert result["qa"].accuracy == 1.0
    assert result["evidence"].macro_f1 > 0.8


def test_missing_evidence_names_option(suite):
    passages, questions, table = suite
    records = run_extraction(passages, questions, table, PipelineSettings())
    truncated = [r for r in records if (r.qid, r.option_index) != (questions[0].qid, 2)]
    settings = PipelineSettings(epochs=1)
    with pytest.raises(ValueError, match=rf"{questions[0].qid}.*option 2"):
        verifier, _ = train_verifier(passages, questions, truncated, table, settings)
    verifier, _ = train_verifier(passages, questions, records, table, settings)
    with pytest.raises(ValueError, match="option 2"):
        run_answer(passages, questions, truncated, verifier, table, settings)


def test_evaluate_evidence_skips_unannotated(suite):
    passages, questions, table = suite
    records = run_extraction(passages, questions, table, PipelineSettings())
    stripped = []
    for q in questions:
        for i in range(4):
            stripped.append(
                EvidenceRecord(qid=q.qid, option_index=i, sentence_indices=(0,), score=0.0)
            )
    report = evaluate_evidence(questions, records)
    assert report is not None
    assert report.options_skipped == 0
    assert report.options_evaluated == 4 * len(questions)


def test_external_rerank_via_stub_sidecar(suite):
    passages, questions, table = suite
    command = [sys.executable, "-u", "-c", OVERLAP_RATIO_STUB]
    settings = PipelineSettings(rerank="external", sidecar_cmd=command, external_fallback=False)
    records = run_extraction(passages, questions, table, settings)
    assert len(records) == 4 * len(questions)
    # the overlap stub favors exactly the gold sentences for answer options
    by_qid = {q.qid: q for q in questions}
    answer_hits = [
        set(r.sentence_indices) == set(by_qid[r.qid].options[r.option_index].gold_evidence)
        for r in records
        if r.option_index == by_qid[r.qid].answer_index
    ]
    assert sum(answer_hits) / len(answer_hits) > 0.8


def test_external_rerank_fallback_on_dead_sidecar(suite):
    passages, questions, table = suite
    dead = [sys.executable, "-c", "pass"]
    settings = PipelineSettings(rerank="external", sidecar_cmd=dead, external_fallback=True)
    records = run_extraction(passages, questions, table, settings)
    fallback_records = run_extraction(passages, questions, table, PipelineSettings())
    assert records == fallback_records

    strict = PipelineSettings(rerank="external", sidecar_cmd=dead, external_fallback=False)
    from evichain.scorers import ScorerError

    with pytest.raises(ScorerError):
        run_extraction(passages, questions, table, strict)


def test_sidecar_env_var_overrides_config(suite, tmp_path, monkeypatch):
    passages, questions, table = suite
    script = tmp_path / "stub.py"
    script.write_text(OVERLAP_RATIO_STUB, encoding="utf-8")
    monkeypatch.setenv("EVICHAIN_SIDECAR_CMD", f"{sys.executable} -u {script}")
    # config points at a dead command; the env var must win
    settings = PipelineSettings(
        rerank="external", sidecar_cmd=[sys.executable, "-c", "pass"], external_fallback=False
    )
    records = run_extraction(passages[:2], questions[:2], table, settings)
    assert len(records) == 8


def test_compare_methods_rows(suite):
    passages, questions, table = suite
    rows, results = compare_methods(
        passages, questions, table, ["soft_mask", "cosine_top1"], PipelineSettings(epochs=20)
    )
    assert [r["method"] for r in rows] == ["soft_mask", "cosine_top1"]
    assert float(rows[0]["F1"]) > float(rows[1]["F1"])
    assert set(results) == {"soft_mask", "cosine_top1"}


def test_build_examples_feature_shape(suite):
    passages, questions, table = suite
    records = run_extraction(passages, questions, table, PipelineSettings())
    examples = build_examples(passages, questions, records, table, PipelineSettings())
    assert len(examples) == len(questions)
    assert all(ex.features.shape == (4, 4) for ex in examples)
