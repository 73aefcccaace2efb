"""Dense similarity-search indices: exact flat scan, inverted-file (IVF),
and a layered proximity graph (HNSW), with a common binary persistence
format."""

from .base import HnswParams, IndexConfig, IvfParams, SearchHit
from .flat import FlatIndex
from .hnsw import HnswIndex
from .io import load_index, load_index_file, save_index, save_index_file
from .ivf import IvfIndex


def build_index(records, config: IndexConfig):
    """Build the index kind named by the config."""
    cls = {"flat": FlatIndex, "ivf": IvfIndex, "hnsw": HnswIndex}[config.kind]
    return cls.build(records, config)


__all__ = [
    "FlatIndex",
    "HnswIndex",
    "HnswParams",
    "IndexConfig",
    "IvfIndex",
    "IvfParams",
    "SearchHit",
    "build_index",
    "load_index",
    "load_index_file",
    "save_index",
    "save_index_file",
]
