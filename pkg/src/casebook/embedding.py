"""Dense embeddings: a deterministic seeded hashing embedder for offline
use, plus a pluggable remote provider speaking a small JSON contract.

All vectors are L2-normalized to unit length; stores are partitioned by
artifact type and carry the producing model version.
"""

from __future__ import annotations

import hashlib
import re
import time
from dataclasses import dataclass
from datetime import datetime, timezone
from typing import Sequence

import httpx
import numpy as np

from .errors import EmbeddingError, RemoteError
from .ingest import PARTITIONS, ArtifactChunk

_WORD_RE = re.compile(r"[a-z0-9]+")


@dataclass(frozen=True)
class EmbedderSpec:
    kind: str  # "hashing" | "remote"
    dimension: int = 384
    model_version: str = ""
    endpoint: str | None = None
    seed: int = 0
    batch_size: int = 64
    max_retries: int = 3
    backoff_seconds: float = 0.5

    def __post_init__(self):
        if self.kind not in ("hashing", "remote"):
            raise EmbeddingError(f"unknown embedder kind {self.kind!r}")
        if self.dimension < 8:
            raise EmbeddingError("dimension must be >= 8")
        if self.kind == "remote" and not self.endpoint:
            raise EmbeddingError("remote embedder requires an endpoint")
        if not self.model_version:
            if self.kind == "hashing":
                version = f"hashing/d{self.dimension}/s{self.seed}"
            else:
                version = f"remote/d{self.dimension}"
            object.__setattr__(self, "model_version", version)


def hashing_spec(dimension: int = 384, seed: int = 0) -> EmbedderSpec:
    return EmbedderSpec(kind="hashing", dimension=dimension, seed=seed)


@dataclass(frozen=True)
class EmbeddingRecord:
    chunk_id: str
    partition: str
    vector: np.ndarray  # float32, unit L2 norm
    model_version: str
    embedded_at: datetime

    def __eq__(self, other):
        if not isinstance(other, EmbeddingRecord):
            return NotImplemented
        return (
            self.chunk_id == other.chunk_id
            and self.partition == other.partition
            and self.model_version == other.model_version
            and self.embedded_at == other.embedded_at
            and np.array_equal(self.vector, other.vector)
        )


def _feature_hash(feature: str, seed: int) -> int:
    key = (seed & 0xFFFFFFFFFFFFFFFF).to_bytes(8, "little")
    digest = hashlib.blake2b(feature.encode("utf-8"), digest_size=8, key=key).digest()
    return int.from_bytes(digest, "little")


def hashing_embed(text: str, spec: EmbedderSpec) -> np.ndarray:
    """Seeded sign-hash embedding over lowercase word unigrams + bigrams.

    A pure function of (text, dimension, seed): each feature lands in a
    hash bucket with a +/-1 sign, counts accumulate, and the result is
    L2-normalized.
    """
    if spec.kind != "hashing":
        raise EmbeddingError("hashing_embed requires a hashing spec")
    tokens = _WORD_RE.findall((text or "").lower())
    if not tokens:
        raise EmbeddingError("no features")
    features = list(tokens)
    features.extend(f"{a} {b}" for a, b in zip(tokens, tokens[1:]))
    acc = np.zeros(spec.dimension, dtype=np.float64)
    for feature in features:
        h = _feature_hash(feature, spec.seed)
        bucket = h % spec.dimension
        sign = 1.0 if (h >> 63) & 1 == 0 else -1.0
        acc[bucket] += sign
    norm = float(np.linalg.norm(acc))
    if norm <= 0.0:
        raise EmbeddingError("no features")  # sign collisions cancelled everything
    return (acc / norm).astype(np.float32)


def _normalize_rows(vectors: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(vectors, axis=1, keepdims=True)
    if np.any(norms <= 0.0):
        raise EmbeddingError("provider returned a zero vector")
    return (vectors / norms).astype(np.float32)


def remote_embed(
    texts: Sequence[str], spec: EmbedderSpec, client: httpx.Client | None = None
) -> list[np.ndarray]:
    """Batch-embed through the remote JSON contract.

    POST {"texts": [...], "model": "..."} -> {"vectors": [[...], ...]}.
    Non-200 responses and transport failures are retried with exponential
    backoff before becoming hard errors; arity and dimension mismatches
    are hard errors immediately.
    """
    if spec.kind != "remote":
        raise EmbeddingError("remote_embed requires a remote spec")
    if len(texts) > spec.batch_size:
        raise EmbeddingError(f"batch of {len(texts)} exceeds max {spec.batch_size}")
    if not texts:
        return []
    payload = {"texts": list(texts), "model": spec.model_version}
    own_client = client is None
    http = client or httpx.Client(timeout=30.0)
    try:
        last_error: Exception | None = None
        for attempt in range(spec.max_retries + 1):
            if attempt:
                time.sleep(spec.backoff_seconds * 2 ** (attempt - 1))
            try:
                response = http.post(spec.endpoint, json=payload)
            except httpx.HTTPError as exc:
                last_error = exc
                continue
            if response.status_code != 200:
                last_error = RemoteError(f"embedder returned HTTP {response.status_code}")
                continue
            body = response.json()
            vectors = body.get("vectors")
            if not isinstance(vectors, list):
                raise EmbeddingError("malformed embedder response: no vectors")
            if len(vectors) != len(texts):
                raise EmbeddingError(
                    f"arity mismatch: sent {len(texts)} texts, got {len(vectors)} vectors"
                )
            mat = np.asarray(vectors, dtype=np.float64)
            if mat.ndim != 2 or mat.shape[1] != spec.dimension:
                actual = mat.shape[1] if mat.ndim == 2 else "ragged"
                raise EmbeddingError(
                    f"dimension mismatch: expected {spec.dimension}, got {actual}"
                )
            normalized = _normalize_rows(mat)
            return [normalized[i] for i in range(normalized.shape[0])]
        raise RemoteError(f"embedder failed after {spec.max_retries + 1} attempts: {last_error}")
    finally:
        if own_client:
            http.close()


class EmbeddingStore:
    """chunk_id -> EmbeddingRecord, single dimension and model version."""

    def __init__(self, dimension: int, model_version: str):
        self.dimension = dimension
        self.model_version = model_version
        self._records: dict[str, EmbeddingRecord] = {}

    def __len__(self) -> int:
        return len(self._records)

    def __contains__(self, chunk_id: str) -> bool:
        return chunk_id in self._records

    def get(self, chunk_id: str) -> EmbeddingRecord | None:
        return self._records.get(chunk_id)

    def add(self, record: EmbeddingRecord):
        if record.chunk_id in self._records:
            raise EmbeddingError(f"duplicate record for {record.chunk_id!r}")
        if record.vector.shape[0] != self.dimension:
            raise EmbeddingError(f"dimension mismatch for {record.chunk_id!r}")
        if record.model_version != self.model_version:
            raise EmbeddingError(f"model version mismatch for {record.chunk_id!r}")
        self._records[record.chunk_id] = record

    def records(self) -> list[EmbeddingRecord]:
        return list(self._records.values())

    def partition_records(self, partition: str) -> list[EmbeddingRecord]:
        return [r for r in self._records.values() if r.partition == partition]

    def counts(self) -> dict[str, int]:
        out = {p: 0 for p in PARTITIONS}
        for record in self._records.values():
            out[record.partition] += 1
        return out

    def replace_all(self, records: Sequence[EmbeddingRecord], dimension: int, model_version: str):
        """Atomically swap in a fully-built record set."""
        fresh: dict[str, EmbeddingRecord] = {}
        for record in records:
            if record.chunk_id in fresh:
                raise EmbeddingError(f"duplicate record for {record.chunk_id!r}")
            fresh[record.chunk_id] = record
        self._records = fresh
        self.dimension = dimension
        self.model_version = model_version

    def equal_contents(self, other: "EmbeddingStore") -> bool:
        if (self.dimension, self.model_version) != (other.dimension, other.model_version):
            return False
        if set(self._records) != set(other._records):
            return False
        return all(self._records[k] == other._records[k] for k in self._records)


def _embed_texts(
    chunks: Sequence[ArtifactChunk], spec: EmbedderSpec, client: httpx.Client | None
) -> list[np.ndarray]:
    if spec.kind == "hashing":
        vectors = []
        for chunk in chunks:
            try:
                vectors.append(hashing_embed(chunk.text, spec))
            except EmbeddingError as exc:
                raise EmbeddingError(f"chunk {chunk.chunk_id!r}: {exc}") from exc
        return vectors
    vectors = []
    for start in range(0, len(chunks), spec.batch_size):
        batch = chunks[start : start + spec.batch_size]
        try:
            vectors.extend(remote_embed([c.text for c in batch], spec, client=client))
        except (EmbeddingError, RemoteError) as exc:
            raise type(exc)(f"batch starting at chunk {batch[0].chunk_id!r}: {exc}") from exc
    return vectors


def embed_corpus(
    chunks: Sequence[ArtifactChunk],
    spec: EmbedderSpec,
    client: httpx.Client | None = None,
    now: datetime | None = None,
) -> EmbeddingStore:
    """Embed every chunk into a fresh store keyed by chunk_id."""
    now = now or datetime.now(timezone.utc)
    store = EmbeddingStore(spec.dimension, spec.model_version)
    vectors = _embed_texts(chunks, spec, client)
    for chunk, vector in zip(chunks, vectors):
        store.add(
            EmbeddingRecord(
                chunk_id=chunk.chunk_id,
                partition=chunk.partition,
                vector=vector,
                model_version=spec.model_version,
                embedded_at=now,
            )
        )
    return store


@dataclass(frozen=True)
class RefreshReport:
    re_embedded: int
    model_version: str


def refresh_embeddings(
    store: EmbeddingStore,
    chunks: Sequence[ArtifactChunk],
    new_spec: EmbedderSpec,
    client: httpx.Client | None = None,
    now: datetime | None = None,
) -> RefreshReport:
    """Re-embed all chunks under new_spec, replacing the store atomically.

    Every vector is recomputed before anything is swapped in, so a failure
    partway leaves the old store untouched.
    """
    now = now or datetime.now(timezone.utc)
    vectors = _embed_texts(chunks, new_spec, client)
    records = [
        EmbeddingRecord(
            chunk_id=chunk.chunk_id,
            partition=chunk.partition,
            vector=vector,
            model_version=new_spec.model_version,
            embedded_at=now,
        )
        for chunk, vector in zip(chunks, vectors)
    ]
    store.replace_all(records, new_spec.dimension, new_spec.model_version)
    return RefreshReport(re_embedded=len(records), model_version=new_spec.model_version)
