"""Service snapshot: the complete persisted state (chunks, embeddings,
indices, links, suggestion + feedback logs) in one directory.

Core files are written temp-then-rename with CRC32s recorded in a manifest
that is written last, so a partially-written snapshot can never load.
Suggestion/feedback logs are append-only JSONL validated line by line.
"""

from __future__ import annotations

import io
import json
import os
import zlib
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path
import numpy as np

from .ann import IndexConfig, build_index, load_index, save_index
from .ann.base import HnswParams, IvfParams
from .embedding import EmbedderSpec, EmbeddingRecord, EmbeddingStore
from .errors import SnapshotError
from .ingest import PARTITIONS, ArtifactChunk, LinkEdge, parse_timestamp
from .lexical import LexicalIndex

MANIFEST = "manifest.json"
SNAPSHOT_FORMAT = 1


@dataclass
class Snapshot:
    chunks: dict[str, ArtifactChunk]
    links: list[LinkEdge]
    store: EmbeddingStore
    indexes: dict[str, object]  # partition -> vector index
    lexical: LexicalIndex
    embedder: EmbedderSpec
    index_config: IndexConfig
    counts: dict[str, int] = field(default_factory=dict)


def build_partition_indexes(store: EmbeddingStore, config: IndexConfig) -> dict[str, object]:
    """One dense index per non-empty partition, records ordered by chunk_id."""
    indexes: dict[str, object] = {}
    for partition in PARTITIONS:
        records = sorted(store.partition_records(partition), key=lambda r: r.chunk_id)
        if records:
            indexes[partition] = build_index(records, config)
    return indexes


def _embedder_to_dict(spec: EmbedderSpec) -> dict:
    return {
        "kind": spec.kind,
        "dimension": spec.dimension,
        "model_version": spec.model_version,
        "endpoint": spec.endpoint,
        "seed": spec.seed,
        "batch_size": spec.batch_size,
    }


def _embedder_from_dict(raw: dict) -> EmbedderSpec:
    return EmbedderSpec(
        kind=raw["kind"],
        dimension=int(raw["dimension"]),
        model_version=raw["model_version"],
        endpoint=raw.get("endpoint"),
        seed=int(raw.get("seed", 0)),
        batch_size=int(raw.get("batch_size", 64)),
    )


def _config_to_dict(config: IndexConfig) -> dict:
    return {
        "kind": config.kind,
        "metric": config.metric,
        "dimension": config.dimension,
        "ivf": asdict(config.ivf),
        "hnsw": asdict(config.hnsw),
    }


def _config_from_dict(raw: dict) -> IndexConfig:
    return IndexConfig(
        kind=raw["kind"],
        metric=raw["metric"],
        dimension=int(raw["dimension"]),
        ivf=IvfParams(**raw["ivf"]),
        hnsw=HnswParams(**raw["hnsw"]),
    )


def _write_file(directory: Path, name: str, data: bytes, files: dict):
    tmp = directory / (name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(data)
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, directory / name)
    files[name] = {"bytes": len(data), "crc32": zlib.crc32(data) & 0xFFFFFFFF}


def save_snapshot(snap: Snapshot, directory: str | Path):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    files: dict[str, dict] = {}

    chunk_lines = []
    for chunk in snap.chunks.values():
        chunk_lines.append(
            json.dumps(
                {
                    "chunk_id": chunk.chunk_id,
                    "partition": chunk.partition,
                    "text": chunk.text,
                    "timestamp": chunk.timestamp.isoformat(),
                    "source_key": chunk.source_key,
                }
            )
        )
    _write_file(directory, "chunks.jsonl", ("\n".join(chunk_lines) + "\n").encode(), files)

    link_lines = [
        json.dumps(
            {
                "ticket_key": e.ticket_key,
                "pr_repo": e.pr_repo,
                "pr_number": e.pr_number,
                "source_field": e.source_field,
            }
        )
        for e in snap.links
    ]
    _write_file(directory, "links.jsonl", ("\n".join(link_lines) + "\n").encode(), files)

    records = sorted(snap.store.records(), key=lambda r: r.chunk_id)
    buf = io.BytesIO()
    np.savez(
        buf,
        ids=np.array([r.chunk_id for r in records]),
        partitions=np.array([r.partition for r in records]),
        vectors=(
            np.stack([r.vector for r in records])
            if records
            else np.zeros((0, snap.store.dimension), np.float32)
        ),
        embedded_at=np.array([r.embedded_at.isoformat() for r in records]),
    )
    _write_file(directory, "embeddings.npz", buf.getvalue(), files)

    for partition, index in snap.indexes.items():
        _write_file(directory, f"index_{partition}.bin", save_index(index), files)

    _write_file(
        directory, "lexical.json", json.dumps(snap.lexical.to_dict()).encode(), files
    )

    manifest = {
        "format": SNAPSHOT_FORMAT,
        "created_at": datetime.now(timezone.utc).isoformat(),
        "embedder": _embedder_to_dict(snap.embedder),
        "index_config": _config_to_dict(snap.index_config),
        "model_version": snap.store.model_version,
        "partitions": sorted(snap.indexes.keys()),
        "counts": snap.counts,
        "files": files,
    }
    tmp = directory / (MANIFEST + ".tmp")
    tmp.write_text(json.dumps(manifest, indent=2), encoding="utf-8")
    os.replace(tmp, directory / MANIFEST)


def _read_checked(directory: Path, name: str, files: dict) -> bytes:
    meta = files.get(name)
    if meta is None:
        raise SnapshotError(f"manifest does not list {name}")
    path = directory / name
    if not path.exists():
        raise SnapshotError(f"missing snapshot file {name}")
    data = path.read_bytes()
    if len(data) != meta["bytes"]:
        raise SnapshotError(f"{name}: size mismatch (expected {meta['bytes']}, got {len(data)})")
    if (zlib.crc32(data) & 0xFFFFFFFF) != meta["crc32"]:
        raise SnapshotError(f"{name}: checksum mismatch")
    return data


def load_snapshot(directory: str | Path) -> Snapshot:
    directory = Path(directory)
    manifest_path = directory / MANIFEST
    if not manifest_path.exists():
        raise SnapshotError(f"no snapshot at {directory} (missing {MANIFEST})")
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError:
        raise SnapshotError("manifest is not valid JSON") from None
    if manifest.get("format") != SNAPSHOT_FORMAT:
        raise SnapshotError(f"unsupported snapshot format {manifest.get('format')!r}")
    files = manifest["files"]

    chunks: dict[str, ArtifactChunk] = {}
    for lineno, line in enumerate(
        _read_checked(directory, "chunks.jsonl", files).decode().splitlines(), start=1
    ):
        if not line.strip():
            continue
        raw = json.loads(line)
        chunk = ArtifactChunk(
            chunk_id=raw["chunk_id"],
            partition=raw["partition"],
            text=raw["text"],
            timestamp=parse_timestamp(raw["timestamp"], f"chunks.jsonl line {lineno}"),
            source_key=raw["source_key"],
        )
        if chunk.chunk_id in chunks:
            raise SnapshotError(f"duplicate chunk_id {chunk.chunk_id!r}")
        chunks[chunk.chunk_id] = chunk

    links: list[LinkEdge] = []
    for line in _read_checked(directory, "links.jsonl", files).decode().splitlines():
        if not line.strip():
            continue
        raw = json.loads(line)
        links.append(
            LinkEdge(raw["ticket_key"], raw["pr_repo"], int(raw["pr_number"]), raw["source_field"])
        )

    embedder = _embedder_from_dict(manifest["embedder"])
    index_config = _config_from_dict(manifest["index_config"])
    model_version = manifest["model_version"]

    npz = np.load(io.BytesIO(_read_checked(directory, "embeddings.npz", files)))
    store = EmbeddingStore(embedder.dimension, model_version)
    ids = npz["ids"]
    partitions = npz["partitions"]
    vectors = npz["vectors"]
    embedded_at = npz["embedded_at"]
    for i in range(ids.shape[0]):
        chunk_id = str(ids[i])
        if chunk_id not in chunks:
            raise SnapshotError(f"embedding for unknown chunk {chunk_id!r}")
        store.add(
            EmbeddingRecord(
                chunk_id=chunk_id,
                partition=str(partitions[i]),
                vector=vectors[i],
                model_version=model_version,
                embedded_at=parse_timestamp(str(embedded_at[i]), "embeddings.npz"),
            )
        )

    indexes: dict[str, object] = {}
    for partition in manifest.get("partitions", []):
        data = _read_checked(directory, f"index_{partition}.bin", files)
        index = load_index(data)
        for chunk_id in index.ids:
            if chunk_id not in chunks:
                raise SnapshotError(f"index id {chunk_id!r} resolves to no chunk")
        indexes[partition] = index

    lexical = LexicalIndex.from_dict(
        json.loads(_read_checked(directory, "lexical.json", files).decode())
    )
    for chunk_id in lexical.doc_lengths:
        if chunk_id not in chunks:
            raise SnapshotError(f"lexical id {chunk_id!r} resolves to no chunk")

    return Snapshot(
        chunks=chunks,
        links=links,
        store=store,
        indexes=indexes,
        lexical=lexical,
        embedder=embedder,
        index_config=index_config,
        counts=dict(manifest.get("counts", {})),
    )
