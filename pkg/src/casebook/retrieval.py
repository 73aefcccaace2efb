"""Query workflow: encode an incoming ticket, gather per-partition dense and
sparse candidates, fuse, re-rank with overlap / temporal decay / feedback
boosts, and expand ticket hits through their PR links."""

from __future__ import annotations

from dataclasses import dataclass, field
from datetime import datetime
from typing import Mapping, Sequence

import numpy as np

from .ann.base import BaseIndex, SearchHit
from .embedding import EmbedderSpec, hashing_embed, remote_embed
from .errors import StaleIndexError
from .ingest import PARTITIONS, ArtifactChunk, LinkEdge, clean_text, extract_issue_keys
from .lexical import LexicalIndex, tokenize

DEFAULT_OVERLAP_WEIGHT = 0.25
DEFAULT_RRF_C = 60.0
DEFAULT_FEEDBACK_BETA = 0.2
ISSUE_KEY_BONUS = 0.2


@dataclass(frozen=True)
class TemporalSpec:
    enabled: bool = True
    half_life_days: float = 180.0
    floor: float = 0.5

    def __post_init__(self):
        if self.half_life_days <= 0:
            raise ValueError("half_life_days must be positive")
        if not 0.0 <= self.floor <= 1.0:
            raise ValueError("floor must be in [0, 1]")


@dataclass(frozen=True)
class QuerySpec:
    text: str
    now: datetime
    k_per_partition: int = 5
    k_final: int = 8
    hybrid: bool = True
    temporal: TemporalSpec = field(default_factory=TemporalSpec)
    overlap_weight: float = DEFAULT_OVERLAP_WEIGHT
    rrf_c: float = DEFAULT_RRF_C

    def __post_init__(self):
        if self.k_per_partition < 1 or self.k_final < 1:
            raise ValueError("k_per_partition and k_final must be >= 1")


@dataclass(frozen=True)
class RankedHit:
    chunk_id: str
    partition: str
    dense_score: float
    sparse_rank: int | None
    overlap: float
    temporal_multiplier: float
    feedback_boost: float
    final_score: float


@dataclass(frozen=True)
class EvidenceBundle:
    query: QuerySpec
    hits: tuple[RankedHit, ...]
    linked_prs: tuple[tuple[str, str], ...]  # (ticket_key, "repo#number")
    retrieved_at: datetime


@dataclass
class RetrievalContext:
    """Read-only view of the corpus a query runs against."""

    chunks: Mapping[str, ArtifactChunk]
    dense: Mapping[str, BaseIndex]  # partition -> index
    lexical: LexicalIndex
    links: Sequence[LinkEdge]
    embedder: EmbedderSpec
    model_version: str  # version the dense indices were built under
    feedback_stats: Mapping[str, tuple[int, int]] = field(default_factory=dict)


def contextual_overlap(query_text: str, chunk_text: str) -> float:
    """Jaccard similarity of token sets, +0.2 when both texts mention a
    common issue key, clamped to 1.0."""
    a = set(tokenize(query_text))
    b = set(tokenize(chunk_text))
    union = a | b
    score = (len(a & b) / len(union)) if union else 0.0
    if set(extract_issue_keys(query_text)) & set(extract_issue_keys(chunk_text)):
        score += ISSUE_KEY_BONUS
    return min(score, 1.0)


def temporal_multiplier(age_days: float, half_life_days: float, floor: float) -> float:
    """floor + (1 - floor) * 2^(-age/half_life); old items decay toward the
    floor but are never eliminated."""
    if age_days < 0:
        age_days = 0.0
    return floor + (1.0 - floor) * 2.0 ** (-age_days / half_life_days)


def fuse_hybrid(
    dense: Sequence[SearchHit], sparse: Sequence[SearchHit], c: float = DEFAULT_RRF_C
) -> list[tuple[str, float]]:
    """Reciprocal-rank fusion over the two ranked lists (1-based ranks),
    sorted by (fused score desc, chunk_id asc)."""
    if c <= 0:
        raise ValueError("rrf constant must be positive")
    fused: dict[str, float] = {}
    for hits in (dense, sparse):
        for rank, hit in enumerate(hits, start=1):
            fused[hit.chunk_id] = fused.get(hit.chunk_id, 0.0) + 1.0 / (c + rank)
    return sorted(fused.items(), key=lambda item: (-item[1], item[0]))


def feedback_boost(accepts: int, rejects: int, beta: float = DEFAULT_FEEDBACK_BETA) -> float:
    """beta * (accepts - rejects) / (accepts + rejects + 1)."""
    total = accepts + rejects
    if total == 0:
        return 0.0
    return beta * (accepts - rejects) / (total + 1)


def apply_feedback_boost(
    stats: Mapping[str, tuple[int, int]], beta: float = DEFAULT_FEEDBACK_BETA
) -> dict[str, float]:
    return {cid: feedback_boost(a, r, beta) for cid, (a, r) in stats.items()}


def _embed_query(text: str, spec: EmbedderSpec) -> np.ndarray:
    if spec.kind == "hashing":
        return hashing_embed(text, spec)
    return remote_embed([text], spec)[0]


def _age_days(now: datetime, then: datetime) -> float:
    return max(0.0, (now - then).total_seconds() / 86400.0)


def retrieve(query: QuerySpec, ctx: RetrievalContext) -> EvidenceBundle:
    """Run the full retrieval pipeline and assemble an evidence bundle.

    Hybrid mode fuses each partition's dense top-k with the sparse hits
    that fall in the same partition (RRF), then min-max-normalizes fused
    scores over the global candidate pool; dense cosine is the base score
    otherwise. final = base * temporal * (1 + boost) + overlap_weight * overlap.
    """
    if not query.text or not query.text.strip():
        raise ValueError("query text must be non-empty")
    partitions = sorted(ctx.dense.keys())
    if query.k_final > len(PARTITIONS) * query.k_per_partition:
        raise ValueError("k_final exceeds the sum of partition budgets")
    if ctx.embedder.model_version != ctx.model_version:
        raise StaleIndexError(
            f"indices built under {ctx.model_version!r} but query embedder is "
            f"{ctx.embedder.model_version!r}; refresh before querying"
        )
    cleaned = clean_text(query.text)
    qvec = _embed_query(cleaned or query.text, ctx.embedder)

    sparse_by_partition: dict[str, list[SearchHit]] = {p: [] for p in partitions}
    if query.hybrid and ctx.lexical.doc_count > 0:
        sparse_hits = ctx.lexical.search(cleaned or query.text, 3 * query.k_per_partition)
        for hit in sparse_hits:
            chunk = ctx.chunks.get(hit.chunk_id)
            if chunk is not None and chunk.partition in sparse_by_partition:
                sparse_by_partition[chunk.partition].append(hit)

    dense_scores: dict[str, float] = {}
    sparse_ranks: dict[str, int] = {}
    candidate_partition: dict[str, str] = {}
    fused_scores: dict[str, float] = {}

    for partition in partitions:
        index = ctx.dense[partition]
        if len(index) == 0:
            continue
        dense_hits = index.search(qvec, query.k_per_partition)
        for hit in dense_hits:
            dense_scores[hit.chunk_id] = hit.score
            candidate_partition[hit.chunk_id] = partition
        if query.hybrid:
            sparse_hits = sparse_by_partition[partition]
            for rank, hit in enumerate(sparse_hits, start=1):
                sparse_ranks[hit.chunk_id] = rank
                candidate_partition.setdefault(hit.chunk_id, partition)
            for chunk_id, fused in fuse_hybrid(dense_hits, sparse_hits, query.rrf_c):
                fused_scores[chunk_id] = fused

    candidates = sorted(candidate_partition)
    if not candidates:
        return EvidenceBundle(query=query, hits=(), linked_prs=(), retrieved_at=query.now)

    # sparse-only candidates still get a true dense score for reporting
    for chunk_id in candidates:
        if chunk_id not in dense_scores:
            index = ctx.dense[candidate_partition[chunk_id]]
            vec = index.vector(chunk_id)
            dense_scores[chunk_id] = float(vec.astype(np.float64) @ index.prepare_query(qvec))

    if query.hybrid:
        values = [fused_scores[c] for c in candidates]
        lo, hi = min(values), max(values)
        if hi > lo:
            base = {c: (fused_scores[c] - lo) / (hi - lo) for c in candidates}
        else:
            base = {c: 1.0 for c in candidates}
    else:
        base = {c: dense_scores[c] for c in candidates}

    boosts = apply_feedback_boost(ctx.feedback_stats)
    hits: list[RankedHit] = []
    for chunk_id in candidates:
        chunk = ctx.chunks[chunk_id]
        if query.temporal.enabled:
            mult = temporal_multiplier(
                _age_days(query.now, chunk.timestamp),
                query.temporal.half_life_days,
                query.temporal.floor,
            )
        else:
            mult = 1.0
        boost = boosts.get(chunk_id, 0.0)
        overlap = contextual_overlap(cleaned or query.text, chunk.text)
        final = base[chunk_id] * mult * (1.0 + boost) + query.overlap_weight * overlap
        hits.append(
            RankedHit(
                chunk_id=chunk_id,
                partition=chunk.partition,
                dense_score=dense_scores[chunk_id],
                sparse_rank=sparse_ranks.get(chunk_id),
                overlap=overlap,
                temporal_multiplier=mult,
                feedback_boost=boost,
                final_score=final,
            )
        )
    hits.sort(key=lambda h: (-h.final_score, h.chunk_id))
    top = tuple(hits[: query.k_final])

    links_by_ticket: dict[str, list[LinkEdge]] = {}
    for edge in ctx.links:
        links_by_ticket.setdefault(edge.ticket_key, []).append(edge)
    linked: list[tuple[str, str]] = []
    seen: set[tuple[str, str]] = set()
    for hit in top:
        if hit.partition != "ticket":
            continue
        ticket_key = ctx.chunks[hit.chunk_id].source_key
        for edge in sorted(
            links_by_ticket.get(ticket_key, ()), key=lambda e: (e.pr_repo, e.pr_number)
        ):
            pair = (ticket_key, edge.pr_id)
            if pair not in seen:
                seen.add(pair)
                linked.append(pair)
    return EvidenceBundle(
        query=query, hits=top, linked_prs=tuple(linked), retrieved_at=query.now
    )
