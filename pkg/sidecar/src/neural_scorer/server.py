"""Scorer sidecar: one JSON request per stdin line, one JSON reply per stdout line.

Protocol:
    request:  {"id": int, "query": str, "candidates": [str, ...]}
    response: {"id": int, "scores": [float, ...]}   (one score per candidate,
              candidate order preserved, replies in request order)

A malformed request yields {"id": ..., "error": str} and the loop continues.
The model-backed scorer replies cosine similarities between sentence
embeddings; the overlap stub is exact and model-free so integration tests
never need weights.  Model load failures exit nonzero before the first reply.
"""

from __future__ import annotations

import argparse
import json
import sys
from typing import Sequence


class OverlapStub:
    """score = |query tokens ∩ candidate tokens| / |query tokens|."""

    def score(self, query: str, candidates: Sequence[str]) -> list[float]:
        query_tokens = set(query.split())
        if not query_tokens:
            return [0.0 for _ in candidates]
        return [
            len(query_tokens & set(c.split())) / len(query_tokens) for c in candidates
        ]


class SentenceModelScorer:
    """Cosine similarity between sentence-transformer embeddings."""

    def __init__(self, model_name: str):
        from sentence_transformers import SentenceTransformer

        self.model = SentenceTransformer(model_name)

    def score(self, query: str, candidates: Sequence[str]) -> list[float]:
        if not candidates:
            return []
        vectors = self.model.encode([query, *candidates])
        q = vectors[0]
        scores = []
        for v in vectors[1:]:
            qn = float((q @ q) ** 0.5)
            vn = float((v @ v) ** 0.5)
            scores.append(float(q @ v / (qn * vn)) if qn > 0 and vn > 0 else 0.0)
        return scores


def handle_line(line: str, scorer) -> dict:
    """Build the reply object for one request line; never raises."""
    try:
        request = json.loads(line)
    except json.JSONDecodeError as exc:
        return {"id": None, "error": f"invalid JSON: {exc}"}
    if not isinstance(request, dict):
        return {"id": None, "error": "request must be a JSON object"}
    request_id = request.get("id")
    query = request.get("query")
    candidates = request.get("candidates")
    if not isinstance(query, str):
        return {"id": request_id, "error": "field 'query' must be a string"}
    if not isinstance(candidates, list) or not all(isinstance(c, str) for c in candidates):
        return {"id": request_id, "error": "field 'candidates' must be a list of strings"}
    try:
        return {"id": request_id, "scores": scorer.score(query, candidates)}
    except Exception as exc:  # keep serving; the client decides what to do
        return {"id": request_id, "error": f"scorer failed: {exc}"}


def serve(scorer, stdin=None, stdout=None) -> None:
    """Single-threaded request loop; flushes after every reply line."""
    stdin = stdin if stdin is not None else sys.stdin
    stdout = stdout if stdout is not None else sys.stdout
    for line in stdin:
        if not line.strip():
            continue
        stdout.write(json.dumps(handle_line(line, scorer), ensure_ascii=False) + "\n")
        stdout.flush()


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="neural-scorer",
        description="Serve sentence-similarity scores over the JSON-lines stdio protocol.",
    )
    group = parser.add_mutually_exclusive_group(required=True)
    group.add_argument("--model", help="sentence-embedding model name or path")
    group.add_argument(
        "--stub",
        choices=["overlap"],
        help="model-free token-overlap scorer (exact, for tests and CI)",
    )
    args = parser.parse_args(argv)

    if args.stub:
        scorer = OverlapStub()
    else:
        try:
            scorer = SentenceModelScorer(args.model)
        except Exception as exc:
            print(f"error: failed to load model {args.model!r}: {exc}", file=sys.stderr)
            return 1
    serve(scorer)
    return 0


if __name__ == "__main__":
    sys.exit(main())
