"""JSON-lines stdio scorer sidecar: sentence-embedding model or overlap stub."""

from .server import OverlapStub, SentenceModelScorer, handle_line, serve

__version__ = "0.1.0"
