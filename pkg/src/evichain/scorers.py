"""Similarity scorers shared by extraction, chain reranking, and verification.

Three kinds sit behind one interface: embedding cosine, Okapi BM25 over a
passage's sentences, and an external process speaking a JSON-lines stdio
protocol (one request object per line, one response object per line, replies
in request order).  Scorer kinds are never mixed within a single ranking pass.
"""

from __future__ import annotations

import json
import math
import os
import select
import shlex
import subprocess
from abc import ABC, abstractmethod
from collections import Counter
from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np

from .embed import EmbeddingTable, sentence_vector

# Structural marker used when chain sentences are concatenated; excluded from
# every similarity vocabulary.
SEPARATOR_TOKEN = "<sep>"


class ScorerError(Exception):
    """An external scorer failed; carries the raw reply when there is one."""

    def __init__(self, message: str, raw_reply: str | None = None):
        super().__init__(message)
        self.raw_reply = raw_reply


class ScorerKind(Enum):
    COSINE = "cosine"
    BM25 = "bm25"
    EXTERNAL = "external"


@dataclass(frozen=True)
class ScorerHandle:
    """Config-level description of a scorer; live scorers are built from it."""

    kind: ScorerKind
    k1: float = 1.2
    b: float = 0.75
    command: tuple[str, ...] | None = None
    timeout: float = 30.0


def strip_separators(tokens: Sequence[str]) -> list[str]:
    return [t for t in tokens if t != SEPARATOR_TOKEN]


def cosine(u: np.ndarray, v: np.ndarray) -> float:
    """Cosine similarity; 0.0 when either vector has zero norm."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise ValueError(f"vector lengths differ: {u.shape} vs {v.shape}")
    nu = float(np.linalg.norm(u))
    nv = float(np.linalg.norm(v))
    if nu == 0.0 or nv == 0.0:
        return 0.0
    return float(np.dot(u, v) / (nu * nv))


class Bm25Index:
    """Okapi BM25 statistics over one passage's sentences.

    IDF uses the +1-smoothed log, ln((N - df + 0.5) / (df + 0.5) + 1), so
    scores stay non-negative.  Arbitrary token sequences can also be scored
    against the corpus statistics, which is how concatenated evidence chains
    get a BM25 feature.
    """

    def __init__(self, sentences: Sequence[Sequence[str]], k1: float = 1.2, b: float = 0.75):
        if not sentences:
            raise ValueError("cannot build a BM25 index over zero sentences")
        self.k1 = k1
        self.b = b
        self.doc_term_freqs = [Counter(s) for s in sentences]
        self.doc_lengths = [len(s) for s in sentences]
        self.n_docs = len(sentences)
        self.avgdl = sum(self.doc_lengths) / self.n_docs
        self.df: Counter = Counter()
        for freqs in self.doc_term_freqs:
            self.df.update(freqs.keys())

    def idf(self, term: str) -> float:
        df = self.df.get(term, 0)
        return math.log((self.n_docs - df + 0.5) / (df + 0.5) + 1.0)

    def _score_freqs(self, query_tokens: Sequence[str], freqs: Counter, length: int) -> float:
        score = 0.0
        norm = self.k1 * (1.0 - self.b + self.b * length / self.avgdl)
        for term in query_tokens:
            tf = freqs.get(term, 0)
            if tf == 0:
                continue
            score += self.idf(term) * tf * (self.k1 + 1.0) / (tf + norm)
        return score

    def score(self, query_tokens: Sequence[str], sentence_idx: int) -> float:
        if not 0 <= sentence_idx < self.n_docs:
            raise IndexError(f"sentence index {sentence_idx} out of range (0..{self.n_docs - 1})")
        return self._score_freqs(
            query_tokens, self.doc_term_freqs[sentence_idx], self.doc_lengths[sentence_idx]
        )

    def score_tokens(self, query_tokens: Sequence[str], doc_tokens: Sequence[str]) -> float:
        """Score a document that is not in the index against the corpus stats."""
        return self._score_freqs(query_tokens, Counter(doc_tokens), len(doc_tokens))


def bm25_score(index: Bm25Index, query_tokens: Sequence[str], sentence_idx: int) -> float:
    return index.score(query_tokens, sentence_idx)


class CosineSentenceScorer:
    """Cosine between a composed query vector and mean-pooled sentence vectors.

    Sentence vectors are cached per (passage id, sentence index); passages are
    immutable after load.
    """

    def __init__(self, table: EmbeddingTable):
        self.table = table
        self._cache: dict[tuple[str, int], np.ndarray] = {}

    def sentence_vec(self, passage, idx: int) -> np.ndarray:
        key = (passage.id, idx)
        vec = self._cache.get(key)
        if vec is None:
            vec = sentence_vector(passage.sentences[idx], self.table)
            self._cache[key] = vec
        return vec

    def score(self, query_vec: np.ndarray, passage, idx: int) -> float:
        return cosine(query_vec, self.sentence_vec(passage, idx))


class PairScorer(ABC):
    """f(query tokens, candidate tokens) -> relevance, over token sequences.

    The separator token is stripped from both sides before scoring.
    """

    @abstractmethod
    def score(self, query_tokens: Sequence[str], candidates: Sequence[Sequence[str]]) -> list[float]:
        ...

    def score_one(self, query_tokens: Sequence[str], candidate: Sequence[str]) -> float:
        return self.score(query_tokens, [candidate])[0]


class CosinePairScorer(PairScorer):
    def __init__(self, table: EmbeddingTable):
        self.table = table

    def score(self, query_tokens, candidates):
        query = strip_separators(query_tokens)
        if not query:
            return [0.0 for _ in candidates]
        qv = sentence_vector(query, self.table)
        out = []
        for cand in candidates:
            tokens = strip_separators(cand)
            out.append(cosine(qv, sentence_vector(tokens, self.table)) if tokens else 0.0)
        return out


class Bm25PairScorer(PairScorer):
    def __init__(self, index: Bm25Index):
        self.index = index

    def score(self, query_tokens, candidates):
        query = strip_separators(query_tokens)
        return [self.index.score_tokens(query, strip_separators(c)) for c in candidates]


class ExternalScorer:
    """Client for a sidecar scorer process speaking JSON lines over stdio.

    Each worker owns one connection.  Requests carry a monotonically
    increasing id; the sidecar must reply in request order.  Any protocol
    breach (exit, malformed reply, id mismatch, wrong score count,
    non-finite score, timeout) raises ScorerError with the raw reply.
    """

    def __init__(self, command: str | Sequence[str], timeout: float = 30.0):
        self.command = shlex.split(command) if isinstance(command, str) else list(command)
        self.timeout = timeout
        self._proc: subprocess.Popen | None = None
        self._buffer = bytearray()
        self._next_id = 0

    def start(self) -> None:
        if self._proc is not None:
            return
        self._proc = subprocess.Popen(
            self.command,
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            bufsize=0,
        )

    def close(self) -> None:
        if self._proc is None:
            return
        try:
            if self._proc.stdin:
                self._proc.stdin.close()
            self._proc.terminate()
            self._proc.wait(timeout=5)
        except Exception:
            self._proc.kill()
        self._proc = None
        self._buffer.clear()

    def __enter__(self) -> "ExternalScorer":
        self.start()
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def _read_line(self) -> str:
        assert self._proc is not None and self._proc.stdout is not None
        fd = self._proc.stdout.fileno()
        import time

        deadline = time.monotonic() + self.timeout
        while True:
            newline = self._buffer.find(b"\n")
            if newline >= 0:
                line = self._buffer[:newline].decode("utf-8", errors="replace")
                del self._buffer[: newline + 1]
                return line
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                raise ScorerError(
                    f"external scorer timed out after {self.timeout}s",
                    raw_reply=self._buffer.decode("utf-8", errors="replace") or None,
                )
            ready, _, _ = select.select([fd], [], [], remaining)
            if not ready:
                continue
            chunk = os.read(fd, 65536)
            if not chunk:
                code = self._proc.poll()
                raise ScorerError(
                    f"external scorer exited (returncode={code}) before replying",
                    raw_reply=self._buffer.decode("utf-8", errors="replace") or None,
                )
            self._buffer.extend(chunk)

    def score_texts(self, query: str, candidates: Sequence[str]) -> list[float]:
        if self._proc is None:
            self.start()
        assert self._proc is not None and self._proc.stdin is not None
        self._next_id += 1
        request_id = self._next_id
        request = json.dumps(
            {"id": request_id, "query": query, "candidates": list(candidates)},
            ensure_ascii=False,
        )
        try:
            self._proc.stdin.write(request.encode("utf-8") + b"\n")
            self._proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            raise ScorerError(f"external scorer pipe closed: {exc}") from exc

        raw = self._read_line()
        try:
            reply = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise ScorerError(f"external scorer sent invalid JSON: {exc}", raw_reply=raw) from exc
        if not isinstance(reply, dict):
            raise ScorerError("external scorer reply is not an object", raw_reply=raw)
        if "error" in reply:
            raise ScorerError(f"external scorer error: {reply['error']}", raw_reply=raw)
        if reply.get("id") != request_id:
            raise ScorerError(
                f"external scorer replied out of order (expected id {request_id}, got {reply.get('id')})",
                raw_reply=raw,
            )
        scores = reply.get("scores")
        if not isinstance(scores, list) or len(scores) != len(candidates):
            raise ScorerError(
                f"external scorer returned {len(scores) if isinstance(scores, list) else 'no'} "
                f"scores for {len(candidates)} candidates",
                raw_reply=raw,
            )
        values = []
        for s in scores:
            value = float(s)
            if not math.isfinite(value):
                raise ScorerError(f"external scorer returned non-finite score {s!r}", raw_reply=raw)
            values.append(value)
        return values


def external_score(scorer: ExternalScorer, query_text: str, candidates: Sequence[str]) -> list[float]:
    """Score candidate texts with the external process, order-preserving."""
    return scorer.score_texts(query_text, candidates)


class ExternalPairScorer(PairScorer):
    """Adapts an ExternalScorer to the token-sequence interface.

    Token sequences are whitespace-joined (separators stripped first).
    """

    def __init__(self, scorer: ExternalScorer):
        self.scorer = scorer

    def score(self, query_tokens, candidates):
        query = " ".join(strip_separators(query_tokens))
        texts = [" ".join(strip_separators(c)) for c in candidates]
        return self.scorer.score_texts(query, texts)


def make_pair_scorer(
    handle: ScorerHandle,
    table: EmbeddingTable | None = None,
    sentences: Sequence[Sequence[str]] | None = None,
) -> PairScorer:
    """Build a live scorer from its config-level handle.

    Cosine needs an embedding table; BM25 needs the sentences it indexes;
    External needs the handle's command line.
    """
    if handle.kind is ScorerKind.COSINE:
        if table is None:
            raise ValueError("cosine scorer needs an embedding table")
        return CosinePairScorer(table)
    if handle.kind is ScorerKind.BM25:
        if sentences is None:
            raise ValueError("bm25 scorer needs the sentences to index")
        return Bm25PairScorer(Bm25Index(sentences, k1=handle.k1, b=handle.b))
    if handle.command is None:
        raise ValueError("external scorer needs a command line")
    return ExternalPairScorer(ExternalScorer(handle.command, timeout=handle.timeout))
