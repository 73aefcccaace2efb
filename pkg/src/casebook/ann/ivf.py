"""Inverted-file index: seeded k-means coarse quantizer + posting lists.

Centroids are frozen after build; add() assigns to the nearest existing
centroid. Refreshing centroids is done by rebuilding.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from ..errors import IndexError_
from .base import BaseIndex, IndexConfig, SearchHit, records_matrix


def _sq_dists_to_centroids(x64: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    """Squared L2 distances, shape (n, nlist); constant x^2 term included."""
    x_sq = np.sum(x64 * x64, axis=1, keepdims=True)
    c_sq = np.sum(centroids * centroids, axis=1)
    return x_sq - 2.0 * (x64 @ centroids.T) + c_sq


def _kmeans(x64: np.ndarray, nlist: int, iters: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Seeded Lloyd iterations with farthest-point re-seeding of empty clusters."""
    n = x64.shape[0]
    rng = np.random.Generator(np.random.PCG64(seed))
    centroids = x64[rng.choice(n, size=nlist, replace=False)].copy()
    assign = np.zeros(n, dtype=np.int64)
    for _ in range(iters):
        dists = _sq_dists_to_centroids(x64, centroids)
        assign = np.argmin(dists, axis=1)
        point_dist = dists[np.arange(n), assign]
        counts = np.bincount(assign, minlength=nlist)
        for cluster in range(nlist):
            members = assign == cluster
            if counts[cluster] > 0:
                centroids[cluster] = x64[members].mean(axis=0)
        # Re-seed empties with the point currently farthest from its centroid.
        for cluster in np.nonzero(counts == 0)[0]:
            farthest = int(np.argmax(point_dist))
            centroids[cluster] = x64[farthest]
            point_dist[farthest] = -1.0
    dists = _sq_dists_to_centroids(x64, centroids)
    assign = np.argmin(dists, axis=1)
    return centroids, assign


class IvfIndex(BaseIndex):
    kind = "ivf"

    def __init__(self, config: IndexConfig):
        super().__init__(config)
        self.centroids = np.zeros((0, config.dimension), dtype=np.float64)
        self._lists: list[list[int]] = []

    @classmethod
    def build(cls, records: Sequence, config: IndexConfig) -> "IvfIndex":
        params = config.ivf
        if params.nlist > len(records):
            raise IndexError_(
                f"nlist too large: {params.nlist} clusters for {len(records)} records"
            )
        index = cls(config)
        ids, mat = records_matrix(records, config.dimension)
        for chunk_id, vec in zip(ids, mat):
            index._append_row(chunk_id, vec)
        x64 = index.vectors64().copy()
        centroids, assign = _kmeans(x64, params.nlist, params.kmeans_iters, params.seed)
        index.centroids = centroids
        index._lists = [[] for _ in range(params.nlist)]
        for row, cluster in enumerate(assign):
            index._lists[int(cluster)].append(row)
        return index

    def assignments(self) -> np.ndarray:
        out = np.zeros(len(self._ids), dtype=np.uint32)
        for cluster, rows in enumerate(self._lists):
            for row in rows:
                out[row] = cluster
        return out

    def set_structure(self, centroids: np.ndarray, assignments: np.ndarray):
        """Restore posting lists from persisted centroids + assignments."""
        self.centroids = np.asarray(centroids, dtype=np.float64)
        self._lists = [[] for _ in range(self.centroids.shape[0])]
        for row, cluster in enumerate(assignments):
            self._lists[int(cluster)].append(int(row))

    def _nearest_centroid(self, v64: np.ndarray) -> int:
        dists = _sq_dists_to_centroids(v64.reshape(1, -1), self.centroids)[0]
        return int(np.argmin(dists))

    def add(self, records: Sequence) -> int:
        if self.centroids.shape[0] == 0:
            raise IndexError_("ivf index must be built before add()")
        records = list(records)
        self._precheck_ids(records)
        for record in records:
            row = self._append_row(record.chunk_id, record.vector)
            cluster = self._nearest_centroid(self._v64[row])
            self._lists[cluster].append(row)
        return len(records)

    def search(self, query: np.ndarray, k: int) -> list[SearchHit]:
        self._check_k(k)
        if not self._ids:
            return []
        q = self.prepare_query(query)
        dists = _sq_dists_to_centroids(q.reshape(1, -1), self.centroids)[0]
        nprobe = min(self.config.ivf.nprobe, self.centroids.shape[0])
        probe = np.argsort(dists, kind="stable")[:nprobe]
        rows: list[int] = []
        for cluster in probe:
            rows.extend(self._lists[int(cluster)])
        if not rows:
            return []
        row_arr = np.asarray(rows, dtype=np.int64)
        scores = self.vectors64()[row_arr] @ q
        return self._top_k(scores, row_arr, k)

    def memory_bytes(self) -> int:
        base = super().memory_bytes()
        base += self.centroids.nbytes
        base += sum(len(rows) for rows in self._lists) * 4
        return base
