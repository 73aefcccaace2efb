"""Layered navigable-small-world graph index.

Level assignment is geometric (multiplier 1/ln(M)), inserts search each
layer with ef_construction candidates, and bidirectional links are pruned
to M per layer (2M at layer 0) with a diversity-aware heuristic. Queries
greedily descend the upper layers and beam-search layer 0 with ef_search.
"""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from . import _kernels as K
from .base import BaseIndex, IndexConfig, SearchHit


class HnswIndex(BaseIndex):
    kind = "hnsw"

    def __init__(self, config: IndexConfig):
        super().__init__(config)
        m = config.hnsw.M
        cap = self._v32.shape[0]
        self._adj0 = np.zeros((cap, 2 * m), dtype=np.int32)
        self._cnt0 = np.zeros(cap, dtype=np.int32)
        self._adj_up: list[np.ndarray] = []  # index l-1 holds layer l
        self._cnt_up: list[np.ndarray] = []
        self._levels = np.zeros(cap, dtype=np.int32)
        self._entry = -1
        self._max_level = -1
        self._rng = np.random.Generator(np.random.PCG64(config.hnsw.seed))
        self._draws = 0
        self._visited = np.zeros(cap, dtype=np.int32)  # epoch-stamped scratch
        self._epoch = 0

    # ------------------------------------------------------------------
    # storage management

    def _reserve(self, extra: int):
        super()._reserve(extra)
        cap = self._v32.shape[0]
        if self._adj0.shape[0] >= cap:
            return
        old = self._adj0.shape[0]

        def grow(arr: np.ndarray) -> np.ndarray:
            shape = (cap,) + arr.shape[1:]
            out = np.zeros(shape, dtype=arr.dtype)
            out[:old] = arr
            return out

        self._adj0 = grow(self._adj0)
        self._cnt0 = grow(self._cnt0)
        self._levels = grow(self._levels)
        self._visited = grow(self._visited)
        self._adj_up = [grow(a) for a in self._adj_up]
        self._cnt_up = [grow(c) for c in self._cnt_up]

    def _layer(self, level: int) -> tuple[np.ndarray, np.ndarray]:
        if level == 0:
            return self._adj0, self._cnt0
        return self._adj_up[level - 1], self._cnt_up[level - 1]

    def _ensure_layers(self, level: int):
        cap = self._v32.shape[0]
        m = self.config.hnsw.M
        while len(self._adj_up) < level:
            self._adj_up.append(np.zeros((cap, m), dtype=np.int32))
            self._cnt_up.append(np.zeros(cap, dtype=np.int32))

    def _draw_level(self) -> int:
        u = 1.0 - self._rng.random()  # (0, 1]
        self._draws += 1
        return int(-math.log(u) / math.log(self.config.hnsw.M))

    def _next_epoch(self) -> int:
        self._epoch += 1
        return self._epoch

    # ------------------------------------------------------------------
    # construction

    @classmethod
    def build(cls, records: Sequence, config: IndexConfig) -> "HnswIndex":
        index = cls(config)
        index.add(records)
        return index

    def add(self, records: Sequence) -> int:
        records = list(records)
        self._precheck_ids(records)
        for record in records:
            row = self._append_row(record.chunk_id, record.vector)
            self._insert(row, self._draw_level())
        return len(records)

    def _insert(self, row: int, level: int):
        self._levels[row] = level
        self._ensure_layers(level)
        if self._entry < 0:
            self._entry = row
            self._max_level = level
            return
        hp = self.config.hnsw
        V = self._v32
        n = len(self._ids)
        q = V[row]
        ep = self._entry
        d = K.point_dist(V, ep, q)
        for lvl in range(self._max_level, level, -1):
            adj, cnt = self._layer(lvl)
            ep, d = K.greedy_descent(V, adj, cnt, ep, d, q)
        entries = np.array([ep], dtype=np.int32)
        for lvl in range(min(level, self._max_level), -1, -1):
            adj, cnt = self._layer(lvl)
            epoch = self._next_epoch()
            rows, dists, count = K.search_layer(
                V, adj, cnt, entries, q, hp.ef_construction, self._visited, epoch, n
            )
            ext_rows, ext_dists, ext_count = K.extend_candidates(
                V, adj, cnt, rows, dists, count, q, hp.ef_construction, self._visited, epoch
            )
            sel, nsel = K.select_neighbors(V, ext_rows, ext_dists, ext_count, hp.M)
            m_max = 2 * hp.M if lvl == 0 else hp.M
            K.link_new_node(V, adj, cnt, row, sel, nsel, m_max)
            entries = rows
        if level > self._max_level:
            self._entry = row
            self._max_level = level

    # ------------------------------------------------------------------
    # search

    def search(self, query: np.ndarray, k: int) -> list[SearchHit]:
        self._check_k(k)
        if not self._ids:
            return []
        q64 = self.prepare_query(query)
        q32 = q64.astype(np.float32)
        ef = max(self.config.hnsw.ef_search, k)
        V = self._v32
        n = len(self._ids)
        ep = self._entry
        d = K.point_dist(V, ep, q32)
        for lvl in range(self._max_level, 0, -1):
            adj, cnt = self._layer(lvl)
            ep, d = K.greedy_descent(V, adj, cnt, ep, d, q32)
        visited = np.zeros(n, dtype=np.int32)  # fresh per call: reader-safe
        entries = np.array([ep], dtype=np.int32)
        rows, _, count = K.search_layer(
            V, self._adj0, self._cnt0, entries, q32, ef, visited, 1, n
        )
        row_arr = rows[:count].astype(np.int64)
        scores = self.vectors64()[row_arr] @ q64
        return self._top_k(scores, row_arr, k)

    # ------------------------------------------------------------------
    # structure access (persistence + tests)

    def structure(self) -> dict:
        """Used portions of the graph arrays, for persistence and equality."""
        n = len(self._ids)
        layers = []
        for lvl in range(0, self._max_level + 1):
            adj, cnt = self._layer(lvl)
            counts = cnt[:n].copy()
            flat = np.concatenate(
                [adj[i, : counts[i]] for i in range(n)] or [np.zeros(0, np.int32)]
            ).astype(np.int32)
            layers.append((counts, flat))
        return {
            "entry": self._entry,
            "max_level": self._max_level,
            "draws": self._draws,
            "levels": self._levels[:n].copy(),
            "layers": layers,
        }

    def restore_structure(self, struct: dict):
        n = len(self._ids)
        self._entry = int(struct["entry"])
        self._max_level = int(struct["max_level"])
        self._levels[:n] = struct["levels"]
        self._ensure_layers(self._max_level)
        for lvl, (counts, flat) in enumerate(struct["layers"]):
            adj, cnt = self._layer(lvl)
            cnt[:n] = counts
            pos = 0
            for i in range(n):
                c = int(counts[i])
                adj[i, :c] = flat[pos : pos + c]
                pos += c
        # replay the level draws so future add() calls continue the sequence
        self._rng = np.random.Generator(np.random.PCG64(self.config.hnsw.seed))
        self._draws = 0
        for _ in range(int(struct["draws"])):
            self._rng.random()
            self._draws += 1

    def structure_equal(self, other: "HnswIndex") -> bool:
        if self._ids != other._ids:
            return False
        a, b = self.structure(), other.structure()
        if (a["entry"], a["max_level"], a["draws"]) != (b["entry"], b["max_level"], b["draws"]):
            return False
        if not np.array_equal(a["levels"], b["levels"]):
            return False
        if len(a["layers"]) != len(b["layers"]):
            return False
        for (ca, fa), (cb, fb) in zip(a["layers"], b["layers"]):
            if not (np.array_equal(ca, cb) and np.array_equal(fa, fb)):
                return False
        return True

    def memory_bytes(self) -> int:
        base = super().memory_bytes()
        n = len(self._ids)
        base += int(self._cnt0[:n].sum()) * 4 + n * 4
        for cnt in self._cnt_up:
            base += int(cnt[:n].sum()) * 4 + n * 4
        base += n * 4  # levels
        return base
