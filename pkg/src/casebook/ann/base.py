"""Shared types and helpers for the dense vector indices."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..errors import IndexError_

KINDS = ("flat", "ivf", "hnsw")
METRICS = ("cosine", "dot")

UNIT_NORM_TOL = 1e-4


@dataclass(frozen=True)
class SearchHit:
    chunk_id: str
    score: float


@dataclass(frozen=True)
class IvfParams:
    nlist: int = 64
    nprobe: int = 8
    kmeans_iters: int = 20
    seed: int = 0


@dataclass(frozen=True)
class HnswParams:
    M: int = 16
    ef_construction: int = 200
    ef_search: int = 64
    seed: int = 0


@dataclass(frozen=True)
class IndexConfig:
    kind: str
    metric: str = "cosine"
    dimension: int = 384
    ivf: IvfParams = field(default_factory=IvfParams)
    hnsw: HnswParams = field(default_factory=HnswParams)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise IndexError_(f"unknown index kind {self.kind!r}")
        if self.metric not in METRICS:
            raise IndexError_(f"unknown metric {self.metric!r}")
        if self.dimension < 1:
            raise IndexError_("dimension must be positive")
        if self.ivf.nprobe > self.ivf.nlist:
            raise IndexError_("nprobe must be <= nlist")
        if min(self.ivf.nlist, self.ivf.nprobe, self.ivf.kmeans_iters) < 1:
            raise IndexError_("ivf parameters must be positive")
        if self.hnsw.M < 2:
            raise IndexError_("hnsw M must be >= 2")
        if min(self.hnsw.ef_construction, self.hnsw.ef_search) < 1:
            raise IndexError_("hnsw ef parameters must be positive")


class BaseIndex:
    """Row storage common to all index kinds.

    Vectors are canonically float32 (the persisted form); a float64 copy
    derived from the float32 values is kept for scoring so results are
    identical before and after a save/load round-trip.
    """

    kind = "base"

    def __init__(self, config: IndexConfig):
        self.config = config
        self._ids: list[str] = []
        self._rows: dict[str, int] = {}
        cap = 16
        self._v32 = np.zeros((cap, config.dimension), dtype=np.float32)
        self._v64 = np.zeros((cap, config.dimension), dtype=np.float64)

    def __len__(self) -> int:
        return len(self._ids)

    @property
    def size(self) -> int:
        return len(self._ids)

    @property
    def ids(self) -> list[str]:
        return list(self._ids)

    def vectors32(self) -> np.ndarray:
        return self._v32[: len(self._ids)]

    def vectors64(self) -> np.ndarray:
        return self._v64[: len(self._ids)]

    def vector(self, chunk_id: str) -> np.ndarray:
        row = self._rows.get(chunk_id)
        if row is None:
            raise IndexError_(f"unknown id {chunk_id!r}")
        return self._v32[row].copy()

    def __contains__(self, chunk_id: str) -> bool:
        return chunk_id in self._rows

    def _reserve(self, extra: int):
        need = len(self._ids) + extra
        cap = self._v32.shape[0]
        if need <= cap:
            return
        new_cap = max(need, int(cap * 1.5) + 1)
        for name in ("_v32", "_v64"):
            old = getattr(self, name)
            grown = np.zeros((new_cap, old.shape[1]), dtype=old.dtype)
            grown[: len(self._ids)] = old[: len(self._ids)]
            setattr(self, name, grown)

    def _append_row(self, chunk_id: str, vector: np.ndarray) -> int:
        if chunk_id in self._rows:
            raise IndexError_(f"duplicate id {chunk_id!r}")
        v32 = self._coerce(vector)
        self._reserve(1)
        row = len(self._ids)
        self._v32[row] = v32
        self._v64[row] = v32.astype(np.float64)
        self._ids.append(chunk_id)
        self._rows[chunk_id] = row
        return row

    def _coerce(self, vector: np.ndarray) -> np.ndarray:
        v = np.asarray(vector, dtype=np.float32).reshape(-1)
        if v.shape[0] != self.config.dimension:
            raise IndexError_(
                f"dimension mismatch: expected {self.config.dimension}, got {v.shape[0]}"
            )
        if self.config.metric == "cosine":
            norm = float(np.linalg.norm(v.astype(np.float64)))
            if abs(norm - 1.0) > UNIT_NORM_TOL:
                raise IndexError_(f"cosine metric requires unit-norm vectors (norm={norm:.6f})")
        return v

    def prepare_query(self, query: np.ndarray) -> np.ndarray:
        """Validate and (for cosine) normalize a query into float64."""
        q = np.asarray(query, dtype=np.float64).reshape(-1)
        if q.shape[0] != self.config.dimension:
            raise IndexError_(
                f"query dimension mismatch: expected {self.config.dimension}, got {q.shape[0]}"
            )
        if self.config.metric == "cosine":
            norm = float(np.linalg.norm(q))
            if norm <= 0.0:
                raise IndexError_("cannot normalize zero query vector")
            q = q / norm
        return q

    def _top_k(self, scores: np.ndarray, rows: np.ndarray | None, k: int) -> list[SearchHit]:
        """Exact top-k by (score desc, chunk_id asc), tie-safe at the boundary.

        `rows` maps positions in `scores` to global row numbers; None means
        scores are already in row order.
        """
        n = scores.shape[0]
        if n == 0:
            return []
        kk = min(k, n)
        if kk == n:
            cand = np.arange(n)
        else:
            part = np.argpartition(-scores, kk - 1)[:kk]
            threshold = scores[part].min()
            cand = np.nonzero(scores >= threshold)[0]
        entries = []
        for pos in cand:
            row = int(rows[pos]) if rows is not None else int(pos)
            entries.append((-float(scores[pos]), self._ids[row]))
        entries.sort()
        return [SearchHit(chunk_id, -neg) for neg, chunk_id in entries[:kk]]

    def _precheck_ids(self, records: Sequence):
        seen: set[str] = set()
        for record in records:
            if record.chunk_id in self._rows or record.chunk_id in seen:
                raise IndexError_(f"duplicate id {record.chunk_id!r}")
            seen.add(record.chunk_id)

    # interface implemented by subclasses
    def add(self, records) -> int:
        raise NotImplementedError

    def search(self, query: np.ndarray, k: int) -> list[SearchHit]:
        raise NotImplementedError

    def memory_bytes(self) -> int:
        base = len(self._ids) * self.config.dimension * 4
        base += sum(len(cid.encode("utf-8")) for cid in self._ids)
        return base

    def _check_k(self, k: int):
        if k < 1:
            raise IndexError_("k must be >= 1")


def records_matrix(records: Sequence, dimension: int) -> tuple[list[str], np.ndarray]:
    """Split embedding records into (ids, float32 matrix) with validation."""
    ids = [r.chunk_id for r in records]
    if len(set(ids)) != len(ids):
        raise IndexError_("duplicate chunk_ids in records")
    mat = np.zeros((len(records), dimension), dtype=np.float32)
    for i, r in enumerate(records):
        v = np.asarray(r.vector, dtype=np.float32).reshape(-1)
        if v.shape[0] != dimension:
            raise IndexError_(f"dimension mismatch for {r.chunk_id!r}")
        mat[i] = v
    return ids, mat
