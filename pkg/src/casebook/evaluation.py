"""Retrieval and generation metrics, plus the index benchmark harness that
reproduces the exact-vs-approximate trade-off comparison at desk scale."""

from __future__ import annotations

import json
import math
import time
import warnings
from collections import Counter
from dataclasses import asdict, dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .ann import IndexConfig, build_index
from .generation import grounding_score

# ---------------------------------------------------------------------------
# retrieval metrics


def recall_at_k(ranked: Sequence[str], relevant: set[str], k: int) -> float:
    """Fraction of the relevant set appearing in the top k."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if not relevant:
        raise ValueError("relevant set must be non-empty")
    return len(set(ranked[:k]) & relevant) / len(relevant)


def mrr(first_relevant_ranks: Iterable[int | None]) -> float:
    """Mean reciprocal rank over queries; a query with no relevant result
    (None) contributes 0."""
    ranks = list(first_relevant_ranks)
    if not ranks:
        return 0.0
    total = 0.0
    for rank in ranks:
        if rank is not None:
            if rank < 1:
                raise ValueError("ranks are 1-based")
            total += 1.0 / rank
    return total / len(ranks)


# ---------------------------------------------------------------------------
# generation metrics


def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def bleu(
    candidate: Sequence[str],
    references: Sequence[Sequence[str]],
    max_n: int = 4,
) -> float:
    """Unsmoothed BLEU on a single candidate/reference pair set.

    Geometric mean of modified n-gram precisions (orders with zero
    candidate n-grams are skipped), times the brevity penalty. Any zero
    precision among the used orders yields 0.
    """
    if not references:
        raise ValueError("at least one reference required")
    c = len(candidate)
    if c == 0:
        return 0.0
    log_sum = 0.0
    used = 0
    for n in range(1, max_n + 1):
        cand_counts = _ngrams(candidate, n)
        total = sum(cand_counts.values())
        if total == 0:
            continue
        max_ref = Counter()
        for ref in references:
            for gram, count in _ngrams(ref, n).items():
                if count > max_ref[gram]:
                    max_ref[gram] = count
        clipped = sum(min(count, max_ref[gram]) for gram, count in cand_counts.items())
        if clipped == 0:
            return 0.0
        log_sum += math.log(clipped / total)
        used += 1
    if used == 0:
        return 0.0
    # effective reference length: closest to candidate length, ties -> shorter
    r = min((abs(len(ref) - c), len(ref)) for ref in references)[1]
    brevity = math.exp(1.0 - r / c) if c < r else 1.0
    return brevity * math.exp(log_sum / used)


def _lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for i in range(1, len(a) + 1):
        cur = [0] * (len(b) + 1)
        ai = a[i - 1]
        for j in range(1, len(b) + 1):
            if ai == b[j - 1]:
                cur[j] = prev[j - 1] + 1
            else:
                cur[j] = max(prev[j], cur[j - 1])
        prev = cur
    return prev[len(b)]


def rouge_l(candidate: Sequence[str], reference: Sequence[str]) -> float:
    """LCS-based F1 (beta = 1)."""
    lcs = _lcs_length(candidate, reference)
    if lcs == 0:
        return 0.0
    precision = lcs / len(candidate)
    recall = lcs / len(reference)
    return 2.0 * precision * recall / (precision + recall)


def factual_consistency(suggestion_bundles: Sequence[tuple], chunks: Mapping) -> float:
    """Mean grounding over (suggestion, bundle) pairs."""
    if not suggestion_bundles:
        return 0.0
    total = sum(
        grounding_score(list(s.steps), b, chunks) for s, b in suggestion_bundles
    )
    return total / len(suggestion_bundles)


# ---------------------------------------------------------------------------
# benchmark harness


@dataclass(frozen=True)
class CorpusSpec:
    n: int = 50_000
    dim: int = 128
    seed: int = 7
    clusters: int = 32
    cluster_std: float = 1.0
    intrinsic_dim: int = 32  # 0 = full-rank isotropic noise


@dataclass
class BenchRow:
    kind: str
    label: str
    build_ms: float
    mean_query_us: float
    p95_query_us: float
    recall_at_10_vs_flat: float
    memory_bytes: int


@dataclass
class EvalReport:
    recall_at: dict[int, float] = field(default_factory=dict)
    mrr: float = 0.0
    per_query: list[dict] = field(default_factory=list)
    generation: dict | None = None
    bench: list[BenchRow] | None = None

    def to_json(self) -> str:
        payload = {
            "recall_at": {str(k): v for k, v in self.recall_at.items()},
            "mrr": self.mrr,
            "per_query": self.per_query,
            "generation": self.generation,
            "bench": [asdict(row) for row in self.bench] if self.bench is not None else None,
        }
        return json.dumps(payload, indent=2)


def gaussian_mixture(
    n: int,
    dim: int,
    clusters: int,
    seed: int,
    cluster_std: float = 1.0,
    intrinsic_dim: int = 32,
) -> tuple[np.ndarray, np.ndarray]:
    """Seeded unit-norm Gaussian-mixture vectors (points, labels).

    Centers are standard normal. Per-cluster noise lives in a random
    intrinsic_dim-dimensional subspace (orthonormal basis), mimicking the
    low intrinsic dimensionality of text-embedding clouds; intrinsic_dim=0
    falls back to full-rank isotropic noise.
    """
    rng = np.random.Generator(np.random.PCG64(seed))
    centers = rng.normal(0.0, 1.0, size=(clusters, dim))
    labels = rng.integers(0, clusters, size=n)
    if intrinsic_dim and intrinsic_dim < dim:
        points = centers[labels].copy()
        noise = rng.normal(0.0, cluster_std, size=(n, intrinsic_dim))
        for c in range(clusters):
            basis, _ = np.linalg.qr(rng.normal(size=(dim, intrinsic_dim)))
            mask = labels == c
            points[mask] += noise[mask] @ basis.T
    else:
        points = centers[labels] + cluster_std * rng.normal(0.0, 1.0, size=(n, dim))
    norms = np.linalg.norm(points, axis=1, keepdims=True)
    points = points / norms
    return points.astype(np.float32), labels


@dataclass(frozen=True)
class _Rec:
    chunk_id: str
    vector: np.ndarray


def _make_records(vectors: np.ndarray, prefix: str = "v") -> list[_Rec]:
    width = len(str(vectors.shape[0]))
    return [_Rec(f"{prefix}{i:0{width}d}", vectors[i]) for i in range(vectors.shape[0])]


def bench_indexes(
    corpus: CorpusSpec,
    configs: Sequence[IndexConfig],
    query_count: int = 1000,
) -> list[BenchRow]:
    """Build each index over a seeded mixture corpus and measure build time,
    per-query latency, recall@10 vs the flat oracle, and structure memory.

    The flat oracle is always benchmarked first, regardless of configs.
    """
    if corpus.n < 1000:
        warnings.warn("benchmark corpora under 1000 vectors give unstable timings")
    vectors, _ = gaussian_mixture(
        corpus.n + query_count,
        corpus.dim,
        corpus.clusters,
        corpus.seed,
        corpus.cluster_std,
        corpus.intrinsic_dim,
    )
    corpus_vecs = vectors[: corpus.n]
    queries = vectors[corpus.n :]
    records = _make_records(corpus_vecs)

    non_flat = [c for c in configs if c.kind != "flat"]
    flat_cfgs = [c for c in configs if c.kind == "flat"]
    flat_config = flat_cfgs[0] if flat_cfgs else IndexConfig(kind="flat", dimension=corpus.dim)
    ordered = [flat_config] + non_flat

    rows: list[BenchRow] = []
    truth: list[set[str]] = []
    for config in ordered:
        t0 = time.perf_counter()
        index = build_index(records, config)
        build_ms = (time.perf_counter() - t0) * 1000.0
        if config.kind == "hnsw":
            index.search(queries[0], 10)  # warm the compiled kernels out of the timing
        latencies = np.empty(query_count)
        results: list[list] = []
        for qi in range(query_count):
            t0 = time.perf_counter()
            hits = index.search(queries[qi], 10)
            latencies[qi] = time.perf_counter() - t0
            results.append(hits)
        if config.kind == "flat" and not truth:
            truth = [{h.chunk_id for h in hits} for hits in results]
        recall = float(
            np.mean(
                [
                    len({h.chunk_id for h in hits} & truth[qi]) / max(1, len(truth[qi]))
                    for qi, hits in enumerate(results)
                ]
            )
        )
        label = config.kind
        if config.kind == "ivf":
            label = f"ivf(nlist={config.ivf.nlist},nprobe={config.ivf.nprobe})"
        elif config.kind == "hnsw":
            label = f"hnsw(M={config.hnsw.M},ef={config.hnsw.ef_search})"
        rows.append(
            BenchRow(
                kind=config.kind,
                label=label,
                build_ms=build_ms,
                mean_query_us=float(latencies.mean() * 1e6),
                p95_query_us=float(np.percentile(latencies, 95) * 1e6),
                recall_at_10_vs_flat=recall,
                memory_bytes=index.memory_bytes(),
            )
        )
    return rows


def format_bench_table(rows: Sequence[BenchRow]) -> str:
    """Aligned plain-text comparison table."""
    headers = ("index", "build ms", "mean query us", "p95 query us", "recall@10", "memory MB")
    table = [headers]
    for row in rows:
        table.append(
            (
                row.label,
                f"{row.build_ms:.1f}",
                f"{row.mean_query_us:.1f}",
                f"{row.p95_query_us:.1f}",
                f"{row.recall_at_10_vs_flat:.4f}",
                f"{row.memory_bytes / 1e6:.1f}",
            )
        )
    widths = [max(len(r[i]) for r in table) for i in range(len(headers))]
    lines = []
    for ri, row in enumerate(table):
        lines.append("  ".join(cell.ljust(widths[i]) for i, cell in enumerate(row)).rstrip())
        if ri == 0:
            lines.append("  ".join("-" * widths[i] for i in range(len(headers))).rstrip())
    return "\n".join(lines)
