"""Binary persistence for the vector indices.

Little-endian layout: magic "RTIX", format version (u32), kind (u8),
metric (u8), dimension (u32), count (u64), a kind-specific config block,
the id table (u16-length-prefixed UTF-8 strings), the raw float32 vector
block, a kind-specific structure block, and a trailing CRC32 over all
prior bytes. load(save(x)) reproduces the structure bit-exactly.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import replace

import numpy as np

from ..errors import IndexFormatError
from .base import KINDS, METRICS, HnswParams, IndexConfig, IvfParams
from .flat import FlatIndex
from .hnsw import HnswIndex
from .ivf import IvfIndex

MAGIC = b"RTIX"
FORMAT_VERSION = 1


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.offset = 0

    def take(self, n: int) -> bytes:
        if self.offset + n > len(self.data):
            raise IndexFormatError("truncated stream", self.offset)
        out = self.data[self.offset : self.offset + n]
        self.offset += n
        return out

    def unpack(self, fmt: str):
        fmt = "<" + fmt
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def _pack(fmt: str, *values) -> bytes:
    return struct.pack("<" + fmt, *values)


def save_index(index) -> bytes:
    """Serialize an index to bytes (CRC32-protected)."""
    out = bytearray()
    out += MAGIC
    out += _pack("I", FORMAT_VERSION)
    out += _pack("B", KINDS.index(index.kind))
    out += _pack("B", METRICS.index(index.config.metric))
    out += _pack("I", index.config.dimension)
    n = len(index)
    out += _pack("Q", n)
    if index.kind == "ivf":
        p = index.config.ivf
        out += _pack("IIIq", p.nlist, p.nprobe, p.kmeans_iters, p.seed)
    elif index.kind == "hnsw":
        p = index.config.hnsw
        out += _pack("IIIq", p.M, p.ef_construction, p.ef_search, p.seed)
    for chunk_id in index.ids:
        raw = chunk_id.encode("utf-8")
        if len(raw) > 0xFFFF:
            raise IndexFormatError(f"id too long: {chunk_id[:32]!r}...")
        out += _pack("H", len(raw))
        out += raw
    out += np.ascontiguousarray(index.vectors32(), dtype="<f4").tobytes()
    if index.kind == "ivf":
        out += np.ascontiguousarray(index.centroids, dtype="<f8").tobytes()
        out += np.ascontiguousarray(index.assignments(), dtype="<u4").tobytes()
    elif index.kind == "hnsw":
        s = index.structure()
        out += _pack("q", s["entry"])
        out += _pack("i", s["max_level"])
        out += _pack("Q", s["draws"])
        out += np.ascontiguousarray(s["levels"], dtype="<i4").tobytes()
        out += _pack("I", len(s["layers"]))
        for counts, flat in s["layers"]:
            out += np.ascontiguousarray(counts, dtype="<u2").tobytes()
            out += _pack("Q", flat.shape[0])
            out += np.ascontiguousarray(flat, dtype="<i4").tobytes()
    out += _pack("I", zlib.crc32(bytes(out)) & 0xFFFFFFFF)
    return bytes(out)


class _Record:
    __slots__ = ("chunk_id", "vector")

    def __init__(self, chunk_id, vector):
        self.chunk_id = chunk_id
        self.vector = vector


def load_index(data: bytes):
    """Deserialize an index, verifying magic, version, bounds and CRC."""
    if len(data) < 4 + 4 + 4:
        raise IndexFormatError("truncated stream", len(data))
    reader = _Reader(data)
    if reader.take(4) != MAGIC:
        raise IndexFormatError("bad magic", 0)
    (version,) = reader.unpack("I")
    if version != FORMAT_VERSION:
        raise IndexFormatError(f"unsupported format version {version}", 4)
    (stored_crc,) = struct.unpack("<I", data[-4:])
    actual_crc = zlib.crc32(data[:-4]) & 0xFFFFFFFF
    if stored_crc != actual_crc:
        raise IndexFormatError("checksum mismatch", len(data) - 4)
    (kind_code,) = reader.unpack("B")
    (metric_code,) = reader.unpack("B")
    if kind_code >= len(KINDS):
        raise IndexFormatError(f"unknown kind code {kind_code}", reader.offset - 2)
    if metric_code >= len(METRICS):
        raise IndexFormatError(f"unknown metric code {metric_code}", reader.offset - 1)
    kind = KINDS[kind_code]
    metric = METRICS[metric_code]
    (dimension,) = reader.unpack("I")
    (count,) = reader.unpack("Q")
    config = IndexConfig(kind=kind, metric=metric, dimension=dimension)
    if kind == "ivf":
        nlist, nprobe, iters, seed = reader.unpack("IIIq")
        config = replace(
            config, ivf=IvfParams(nlist=nlist, nprobe=nprobe, kmeans_iters=iters, seed=seed)
        )
    elif kind == "hnsw":
        m, efc, efs, seed = reader.unpack("IIIq")
        config = replace(
            config, hnsw=HnswParams(M=m, ef_construction=efc, ef_search=efs, seed=seed)
        )
    ids = []
    for _ in range(count):
        (length,) = reader.unpack("H")
        ids.append(reader.take(length).decode("utf-8"))
    vec_bytes = reader.take(count * dimension * 4)
    vectors = np.frombuffer(vec_bytes, dtype="<f4").reshape(count, dimension)

    if kind == "flat":
        index = FlatIndex(config)
    elif kind == "ivf":
        index = IvfIndex(config)
    else:
        index = HnswIndex(config)
    for chunk_id, vec in zip(ids, vectors):
        index._append_row(chunk_id, vec)

    if kind == "ivf":
        cen_bytes = reader.take(config.ivf.nlist * dimension * 8)
        centroids = np.frombuffer(cen_bytes, dtype="<f8").reshape(config.ivf.nlist, dimension)
        assign = np.frombuffer(reader.take(count * 4), dtype="<u4")
        if count and assign.max(initial=0) >= config.ivf.nlist:
            raise IndexFormatError("assignment out of range", reader.offset)
        index.set_structure(centroids.copy(), assign)
    elif kind == "hnsw":
        (entry,) = reader.unpack("q")
        (max_level,) = reader.unpack("i")
        (draws,) = reader.unpack("Q")
        levels = np.frombuffer(reader.take(count * 4), dtype="<i4")
        (n_layers,) = reader.unpack("I")
        if n_layers != max_level + 1 and not (count == 0 and n_layers == 0):
            raise IndexFormatError("layer count mismatch", reader.offset)
        layers = []
        for _ in range(n_layers):
            counts = np.frombuffer(reader.take(count * 2), dtype="<u2")
            (total,) = reader.unpack("Q")
            flat = np.frombuffer(reader.take(int(total) * 4), dtype="<i4")
            if int(counts.sum()) != int(total):
                raise IndexFormatError("adjacency length mismatch", reader.offset)
            if total and (flat.min() < 0 or flat.max() >= count):
                raise IndexFormatError("neighbor row out of range", reader.offset)
            layers.append((counts.astype(np.int32), flat.astype(np.int32)))
        if count and not (0 <= entry < count):
            raise IndexFormatError("entry point out of range", reader.offset)
        index.restore_structure(
            {
                "entry": entry,
                "max_level": max_level,
                "draws": draws,
                "levels": levels.astype(np.int32),
                "layers": layers,
            }
        )
    if reader.offset != len(data) - 4:
        raise IndexFormatError("trailing garbage", reader.offset)
    return index


def save_index_file(index, path):
    data = save_index(index)
    with open(path, "wb") as fh:
        fh.write(data)


def load_index_file(path):
    with open(path, "rb") as fh:
        return load_index(fh.read())
