"""BM25 inverted index over chunk text - the sparse half of hybrid retrieval."""

from __future__ import annotations

import math
import re
from collections import Counter
from dataclasses import dataclass
from typing import Sequence

from .ann.base import SearchHit
from .ingest import ArtifactChunk

# Fixed 30-word stopword list shared by the tokenizer and the overlap and
# grounding scorers. Changing it changes indexed token sets, so treat it as
# part of the index format.
STOPWORDS = frozenset(
    (
        "a", "an", "and", "are", "as", "at", "be", "but", "by", "for",
        "from", "had", "has", "have", "if", "in", "is", "it", "of", "on",
        "or", "that", "the", "this", "to", "was", "were", "when", "will",
        "with",
    )
)

_TOKEN_RE = re.compile(r"[a-z0-9]+")


def tokenize(text: str) -> list[str]:
    """Lowercase, split on non-alphanumerics, drop stopwords and 1-char tokens."""
    return [
        t
        for t in _TOKEN_RE.findall((text or "").lower())
        if len(t) > 1 and t not in STOPWORDS
    ]


@dataclass(frozen=True)
class Bm25Params:
    k1: float = 1.2
    b: float = 0.75


class LexicalIndex:
    """Immutable-after-build BM25 index; rebuilds replace it wholesale."""

    def __init__(self, params: Bm25Params | None = None):
        self.params = params or Bm25Params()
        self.postings: dict[str, list[tuple[str, int]]] = {}
        self.doc_lengths: dict[str, int] = {}
        self.doc_count = 0
        self.avg_doc_length = 0.0

    @classmethod
    def build(
        cls, chunks: Sequence[ArtifactChunk], params: Bm25Params | None = None
    ) -> "LexicalIndex":
        index = cls(params)
        for chunk in chunks:
            tokens = tokenize(chunk.text)
            index.doc_lengths[chunk.chunk_id] = len(tokens)
            for term, tf in Counter(tokens).items():
                index.postings.setdefault(term, []).append((chunk.chunk_id, tf))
        for plist in index.postings.values():
            plist.sort(key=lambda entry: entry[0])
        index.doc_count = len(index.doc_lengths)
        if index.doc_count:
            index.avg_doc_length = sum(index.doc_lengths.values()) / index.doc_count
        return index

    def idf(self, term: str) -> float:
        df = len(self.postings.get(term, ()))
        if df == 0:
            return 0.0
        return math.log(1.0 + (self.doc_count - df + 0.5) / (df + 0.5))

    def search(self, query: str, k: int) -> list[SearchHit]:
        """Top-k by BM25, ties broken by chunk_id ascending.

        Query terms are deduplicated before scoring; only documents with a
        positive score are returned.
        """
        if k < 1:
            raise ValueError("k must be >= 1")
        if self.doc_count == 0:
            return []
        k1, b = self.params.k1, self.params.b
        scores: dict[str, float] = {}
        for term in sorted(set(tokenize(query))):
            plist = self.postings.get(term)
            if not plist:
                continue
            idf = self.idf(term)
            for chunk_id, tf in plist:
                rel_len = (
                    self.doc_lengths[chunk_id] / self.avg_doc_length
                    if self.avg_doc_length > 0
                    else 0.0
                )
                denom = tf + k1 * (1.0 - b + b * rel_len)
                scores[chunk_id] = scores.get(chunk_id, 0.0) + idf * tf * (k1 + 1.0) / denom
        ranked = sorted(scores.items(), key=lambda item: (-item[1], item[0]))
        return [SearchHit(chunk_id, score) for chunk_id, score in ranked[:k] if score > 0.0]

    def to_dict(self) -> dict:
        return {
            "params": {"k1": self.params.k1, "b": self.params.b},
            "postings": {t: [[cid, tf] for cid, tf in pl] for t, pl in self.postings.items()},
            "doc_lengths": self.doc_lengths,
            "doc_count": self.doc_count,
            "avg_doc_length": self.avg_doc_length,
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "LexicalIndex":
        index = cls(Bm25Params(**raw["params"]))
        index.postings = {
            t: [(cid, int(tf)) for cid, tf in pl] for t, pl in raw["postings"].items()
        }
        index.doc_lengths = {cid: int(n) for cid, n in raw["doc_lengths"].items()}
        index.doc_count = int(raw["doc_count"])
        index.avg_doc_length = float(raw["avg_doc_length"])
        return index
