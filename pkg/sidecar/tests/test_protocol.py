"""Protocol conformance tests driven over real pipes against the sidecar."""

import importlib.util
import json
import os
import random
import subprocess
import sys

import pytest

from neural_scorer.server import OverlapStub, handle_line

STUB_CMD = [sys.executable, "-m", "neural_scorer", "--stub", "overlap"]


class RawClient:
    """Minimal wire-protocol driver; sends raw lines, reads raw replies."""

    def __init__(self, command=STUB_CMD):
        self.proc = subprocess.Popen(
            command,
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            text=True,
            bufsize=1,
        )

    def send_raw(self, line: str) -> dict:
        self.proc.stdin.write(line + "\n")
        self.proc.stdin.flush()
        reply = self.proc.stdout.readline()
        assert reply, "sidecar closed its stdout"
        return json.loads(reply)

    def request(self, request_id, query, candidates) -> dict:
        return self.send_raw(
            json.dumps({"id": request_id, "query": query, "candidates": candidates})
        )

    def close(self):
        self.proc.stdin.close()
        self.proc.terminate()
        self.proc.wait(timeout=5)

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def local_overlap(query: str, candidates) -> list[float]:
    tokens = set(query.split())
    if not tokens:
        return [0.0 for _ in candidates]
    return [len(tokens & set(c.split())) / len(tokens) for c in candidates]


# --- stub arithmetic ---------------------------------------------------------


def test_stub_half_overlap():
    assert OverlapStub().score("a b", ["a c"]) == [0.5]


def test_stub_identical_text():
    assert OverlapStub().score("x y z", ["x y z"]) == [1.0]


def test_stub_disjoint():
    assert OverlapStub().score("a b", ["c d"]) == [0.0]


def test_stub_empty_query():
    assert OverlapStub().score("", ["a", "b"]) == [0.0, 0.0]


# --- request handling (in process) ---------------------------------------------


def test_handle_line_invalid_json():
    reply = handle_line("{nope", OverlapStub())
    assert reply["id"] is None and "error" in reply


def test_handle_line_wrong_types():
    reply = handle_line(json.dumps({"id": 3, "query": 7, "candidates": []}), OverlapStub())
    assert reply == {"id": 3, "error": "field 'query' must be a string"}
    reply = handle_line(json.dumps({"id": 4, "query": "a", "candidates": ["x", 1]}), OverlapStub())
    assert reply["id"] == 4 and "candidates" in reply["error"]


# --- live process conformance -----------------------------------------------------


def test_protocol_shapes_over_pipe():
    with RawClient() as client:
        reply = client.request(1, "a b", ["a", "c"])
        assert reply == {"id": 1, "scores": [0.5, 0.0]}
        reply = client.request(2, "a", [])
        assert reply == {"id": 2, "scores": []}


def test_malformed_line_keeps_serving():
    with RawClient() as client:
        bad = client.send_raw("this is not json")
        assert bad["id"] is None and "error" in bad
        good = client.request(5, "a", ["a"])
        assert good == {"id": 5, "scores": [1.0]}


def test_soak_1000_requests_in_order_and_exact():
    rng = random.Random(7)
    vocab = [f"w{i}" for i in range(40)]
    with RawClient() as client:
        for request_id in range(1, 1001):
            query = " ".join(rng.choices(vocab, k=rng.randint(0, 8)))
            candidates = [
                " ".join(rng.choices(vocab, k=rng.randint(0, 8)))
                for _ in range(rng.randint(0, 6))
            ]
            reply = client.request(request_id, query, candidates)
            assert set(reply) == {"id", "scores"}, f"unexpected reply shape: {reply}"
            assert reply["id"] == request_id
            assert len(reply["scores"]) == len(candidates)
            assert all(isinstance(s, (int, float)) for s in reply["scores"])
            assert reply["scores"] == local_overlap(query, candidates)


def test_fuzzed_wellformed_requests_yield_valid_shapes():
    rng = random.Random(13)
    with RawClient() as client:
        for request_id in range(200):
            query = " ".join(
                "".join(rng.choices("abcdefg", k=rng.randint(1, 5)))
                for _ in range(rng.randint(0, 5))
            )
            candidates = [
                " ".join(
                    "".join(rng.choices("abcdefg", k=rng.randint(1, 5)))
                    for _ in range(rng.randint(0, 5))
                )
                for _ in range(rng.randint(0, 4))
            ]
            reply = client.request(request_id, query, candidates)
            assert reply["id"] == request_id
            assert len(reply["scores"]) == len(candidates)


def test_model_load_failure_exits_nonzero_before_any_reply():
    proc = subprocess.run(
        [sys.executable, "-m", "neural_scorer", "--model", "/definitely/not/a/model"],
        input="",
        capture_output=True,
        text=True,
        timeout=120,
    )
    assert proc.returncode != 0
    assert proc.stdout == ""
    assert "error" in proc.stderr.lower()


# --- integration with the primary client --------------------------------------------


@pytest.mark.skipif(
    importlib.util.find_spec("evichain") is None,
    reason="primary package not installed",
)
def test_primary_external_score_matches_local_recomputation():
    from evichain.scorers import ExternalScorer, external_score

    rng = random.Random(3)
    vocab = [f"t{i}" for i in range(25)]
    with ExternalScorer(STUB_CMD, timeout=30.0) as scorer:
        for _ in range(300):
            query = " ".join(rng.choices(vocab, k=rng.randint(1, 7)))
            candidates = [
                " ".join(rng.choices(vocab, k=rng.randint(0, 7)))
                for _ in range(rng.randint(1, 5))
            ]
            assert external_score(scorer, query, candidates) == local_overlap(query, candidates)


MODEL_ENV = "NEURAL_SCORER_TEST_MODEL"


@pytest.mark.skipif(
    os.environ.get(MODEL_ENV) is None,
    reason=f"set {MODEL_ENV} to a loadable sentence-transformers model to run",
)
def test_model_mode_self_similarity_dominates():
    command = [sys.executable, "-m", "neural_scorer", "--model", os.environ[MODEL_ENV]]
    with RawClient(command) as client:
        reply = client.request(1, "the cat sat on the mat", [
            "the cat sat on the mat",
            "quarterly earnings rose sharply",
        ])
        assert reply["id"] == 1
        assert reply["scores"][0] > reply["scores"][1]
