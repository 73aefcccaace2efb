"""Exact brute-force index: the accuracy oracle for the approximate kinds."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .base import BaseIndex, IndexConfig, SearchHit


class FlatIndex(BaseIndex):
    kind = "flat"

    @classmethod
    def build(cls, records: Sequence, config: IndexConfig) -> "FlatIndex":
        index = cls(config)
        index.add(records)
        return index

    def add(self, records: Sequence) -> int:
        records = list(records)
        self._precheck_ids(records)
        for record in records:
            self._append_row(record.chunk_id, record.vector)
        return len(records)

    def search(self, query: np.ndarray, k: int) -> list[SearchHit]:
        self._check_k(k)
        if not self._ids:
            return []
        q = self.prepare_query(query)
        scores = self.vectors64() @ q
        return self._top_k(scores, None, k)
