"""Command-line entry points: ingest, build-index, query, suggest, eval,
bench, serve, refresh.

Exit codes: 0 success, 1 usage error, 2 data error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from datetime import datetime, timezone
from pathlib import Path

from .ann import IndexConfig
from .ann.base import HnswParams, IvfParams
from .config import load_config
from .embedding import EmbedderSpec, embed_corpus, refresh_embeddings
from .errors import CasebookError
from .evaluation import (
    CorpusSpec,
    EvalReport,
    bench_indexes,
    format_bench_table,
    mrr,
    recall_at_k,
)
from .generation import RemoteGeneratorConfig, generate
from .ingest import (
    link_tickets_prs,
    normalize_corpus,
    parse_github_export,
    parse_jira_export,
)
from .lexical import LexicalIndex
from .retrieval import QuerySpec, RetrievalContext, retrieve
from .snapshot import Snapshot, build_partition_indexes, load_snapshot, save_snapshot

USAGE_ERROR = 1
DATA_ERROR = 2


class DataError(CasebookError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse defaults to exit code 2; we use 1
        self.print_usage(sys.stderr)
        self.exit(USAGE_ERROR, f"{self.prog}: error: {message}\n")


def _build_parser() -> _Parser:
    parser = _Parser(prog="casebook", description=__doc__)
    parser.add_argument("--config", help="key = value config file")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("ingest", help="parse exports, embed, index, write a snapshot")
    p.add_argument("--jira", required=True, help="JIRA tickets JSONL export")
    p.add_argument("--github", required=True, help="GitHub pull-request JSONL export")
    p.add_argument("--out", required=True, help="snapshot directory")
    p.add_argument("--dimension", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--kind", choices=("flat", "ivf", "hnsw"), default=None)

    p = sub.add_parser("build-index", help="rebuild dense indices for a snapshot")
    p.add_argument("--snapshot", required=True)
    p.add_argument("--kind", choices=("flat", "ivf", "hnsw"), required=True)
    p.add_argument("--hnsw-m", type=int, default=None)
    p.add_argument("--hnsw-ef-construction", type=int, default=None)
    p.add_argument("--hnsw-ef-search", type=int, default=None)
    p.add_argument("--ivf-nlist", type=int, default=None)
    p.add_argument("--ivf-nprobe", type=int, default=None)
    p.add_argument("--index-seed", type=int, default=0)

    p = sub.add_parser("query", help="one-shot retrieval, prints the evidence bundle")
    p.add_argument("--snapshot", required=True)
    p.add_argument("--text", required=True)
    p.add_argument("--k", type=int, default=8)

    p = sub.add_parser("suggest", help="one-shot suggestion, prints it as JSON")
    p.add_argument("--snapshot", required=True)
    p.add_argument("--text", required=True)
    p.add_argument("--generator", choices=("extractive", "remote"), default="extractive")
    p.add_argument("--k", type=int, default=8)

    p = sub.add_parser("eval", help="run judged queries and write an eval report")
    p.add_argument("--snapshot", required=True)
    p.add_argument("--judgments", required=True, help="JSONL: {query_id, text, relevant:[...]}")
    p.add_argument("--out", default=None, help="report JSON path (default: stdout)")
    p.add_argument("--ks", default="5,10", help="comma-separated recall cutoffs")

    p = sub.add_parser("bench", help="benchmark index kinds on a synthetic corpus")
    p.add_argument("--n", type=int, default=50_000)
    p.add_argument("--dim", type=int, default=128)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--clusters", type=int, default=32)
    p.add_argument("--queries", type=int, default=1000)
    p.add_argument("--out", default=None, help="also write rows as JSON")

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--snapshot", required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8270)

    p = sub.add_parser("refresh", help="re-embed all chunks and rebuild indices")
    p.add_argument("--snapshot", required=True)
    p.add_argument("--seed", type=int, default=None, help="new hashing seed")
    p.add_argument("--dimension", type=int, default=None)

    return parser


def _embedder_from(cfg: dict, dimension=None, seed=None) -> EmbedderSpec:
    kind = cfg.get("embedder", "hashing")
    dim = dimension if dimension is not None else cfg.get("dimension", 384)
    if kind == "remote":
        return EmbedderSpec(kind="remote", dimension=dim, endpoint=cfg.get("embed_endpoint"))
    return EmbedderSpec(
        kind="hashing", dimension=dim, seed=seed if seed is not None else cfg.get("seed", 0)
    )


def _index_config_from(cfg: dict, kind: str, dimension: int, args=None) -> IndexConfig:
    hnsw = HnswParams(
        M=(getattr(args, "hnsw_m", None) or cfg.get("hnsw_m", 16)),
        ef_construction=(
            getattr(args, "hnsw_ef_construction", None) or cfg.get("hnsw_ef_construction", 200)
        ),
        ef_search=(getattr(args, "hnsw_ef_search", None) or cfg.get("hnsw_ef_search", 64)),
        seed=getattr(args, "index_seed", 0),
    )
    ivf = IvfParams(
        nlist=(getattr(args, "ivf_nlist", None) or cfg.get("ivf_nlist", 64)),
        nprobe=(getattr(args, "ivf_nprobe", None) or cfg.get("ivf_nprobe", 8)),
        kmeans_iters=cfg.get("ivf_kmeans_iters", 20),
        seed=getattr(args, "index_seed", 0),
    )
    return IndexConfig(
        kind=kind, metric=cfg.get("metric", "cosine"), dimension=dimension, hnsw=hnsw, ivf=ivf
    )


def _read_lines(path: str):
    p = Path(path)
    if not p.exists():
        raise DataError(f"no such file: {path}")
    with open(p, "r", encoding="utf-8") as fh:
        return fh.readlines()


def _cmd_ingest(args, cfg) -> int:
    tickets = parse_jira_export(_read_lines(args.jira))
    prs = parse_github_export(_read_lines(args.github))
    warnings: list[dict] = []
    links = link_tickets_prs(tickets, prs, diagnostics=warnings.append)
    for warning in warnings:
        print(json.dumps(warning), file=sys.stderr)
    chunks = normalize_corpus(tickets, prs)
    if not chunks:
        raise DataError("empty corpus: no chunks after normalization")
    embedder = _embedder_from(cfg, args.dimension, args.seed)
    store = embed_corpus(chunks, embedder)
    kind = args.kind or cfg.get("index_kind", "flat")
    index_config = _index_config_from(cfg, kind, embedder.dimension)
    indexes = build_partition_indexes(store, index_config)
    lexical = LexicalIndex.build(chunks)
    counts = {
        "tickets": len(tickets),
        "pull_requests": len(prs),
        "links": len(links),
        "chunks": len(chunks),
        **{f"{p}_chunks": c for p, c in store.counts().items()},
    }
    snap = Snapshot(
        chunks={c.chunk_id: c for c in chunks},
        links=links,
        store=store,
        indexes=indexes,
        lexical=lexical,
        embedder=embedder,
        index_config=index_config,
        counts=counts,
    )
    save_snapshot(snap, args.out)
    print(f"snapshot written to {args.out}")
    for name in ("tickets", "pull_requests", "links", "chunks"):
        print(f"  {name}: {counts[name]}")
    for partition, count in store.counts().items():
        print(f"  {partition} chunks: {count}")
    return 0


def _cmd_build_index(args, cfg) -> int:
    snap = load_snapshot(args.snapshot)
    index_config = _index_config_from(cfg, args.kind, snap.embedder.dimension, args)
    snap.indexes = build_partition_indexes(snap.store, index_config)
    snap.index_config = index_config
    save_snapshot(snap, args.snapshot)
    print(f"rebuilt {args.kind} indices for {sorted(snap.indexes)}")
    return 0


def _load_nonempty(path: str) -> Snapshot:
    snap = load_snapshot(path)
    if not snap.chunks:
        raise DataError("empty corpus")
    return snap


def _context(snap: Snapshot) -> RetrievalContext:
    return RetrievalContext(
        chunks=snap.chunks,
        dense=snap.indexes,
        lexical=snap.lexical,
        links=snap.links,
        embedder=snap.embedder,
        model_version=snap.store.model_version,
    )


def _bundle_json(bundle) -> dict:
    return {
        "hits": [dataclasses.asdict(h) for h in bundle.hits],
        "linked_prs": [{"ticket_key": t, "pr": p} for t, p in bundle.linked_prs],
        "retrieved_at": bundle.retrieved_at.isoformat(),
    }


def _cmd_query(args, cfg) -> int:
    snap = _load_nonempty(args.snapshot)
    spec = QuerySpec(text=args.text, now=datetime.now(timezone.utc), k_final=args.k)
    bundle = retrieve(spec, _context(snap))
    print(json.dumps(_bundle_json(bundle), indent=2))
    return 0


def _cmd_suggest(args, cfg) -> int:
    snap = _load_nonempty(args.snapshot)
    spec = QuerySpec(text=args.text, now=datetime.now(timezone.utc), k_final=args.k)
    bundle = retrieve(spec, _context(snap))
    remote = None
    if args.generator == "remote":
        endpoint = cfg.get("generate_endpoint")
        if not endpoint:
            raise DataError("remote generator unconfigured (set generate_endpoint)")
        remote = RemoteGeneratorConfig(endpoint=endpoint)
    suggestion = generate(
        bundle, args.text, snap.chunks, generator=args.generator, remote=remote
    )
    out = dataclasses.asdict(suggestion)
    out["created_at"] = suggestion.created_at.isoformat()
    out["bundle"] = _bundle_json(bundle)
    print(json.dumps(out, indent=2))
    return 0


def _cmd_eval(args, cfg) -> int:
    snap = _load_nonempty(args.snapshot)
    ks = [int(k) for k in str(args.ks).split(",") if k.strip()]
    ctx = _context(snap)
    judged = []
    for lineno, line in enumerate(_read_lines(args.judgments), start=1):
        if not line.strip():
            continue
        try:
            raw = json.loads(line)
            judged.append((raw["query_id"], raw["text"], set(raw["relevant"])))
        except (json.JSONDecodeError, KeyError):
            raise DataError(f"{args.judgments}: bad judgment at line {lineno}") from None
    if not judged:
        raise DataError("no judgments")
    report = EvalReport()
    ranks: list[int | None] = []
    max_k = max(max(ks), 10)
    for query_id, text, relevant in judged:
        spec = QuerySpec(
            text=text, now=datetime.now(timezone.utc), k_final=max_k, k_per_partition=max_k
        )
        bundle = retrieve(spec, ctx)
        ranked = [h.chunk_id for h in bundle.hits]
        first = next((i + 1 for i, cid in enumerate(ranked) if cid in relevant), None)
        ranks.append(first)
        detail = {"query_id": query_id, "first_relevant_rank": first}
        for k in ks:
            detail[f"recall@{k}"] = recall_at_k(ranked, relevant, k)
        report.per_query.append(detail)
    for k in ks:
        report.recall_at[k] = sum(d[f"recall@{k}"] for d in report.per_query) / len(judged)
    report.mrr = mrr(ranks)
    text_out = report.to_json()
    if args.out:
        Path(args.out).write_text(text_out, encoding="utf-8")
        print(f"report written to {args.out}")
    else:
        print(text_out)
    return 0


def _cmd_bench(args, cfg) -> int:
    corpus = CorpusSpec(n=args.n, dim=args.dim, seed=args.seed, clusters=args.clusters)
    configs = [
        IndexConfig(kind="flat", dimension=args.dim),
        IndexConfig(kind="hnsw", dimension=args.dim),
        IndexConfig(kind="ivf", dimension=args.dim),
    ]
    rows = bench_indexes(corpus, configs, query_count=args.queries)
    print(format_bench_table(rows))
    if args.out:
        Path(args.out).write_text(
            json.dumps([dataclasses.asdict(r) for r in rows], indent=2), encoding="utf-8"
        )
        print(f"rows written to {args.out}")
    return 0


def _cmd_serve(args, cfg) -> int:
    import uvicorn

    from .server import ServiceState, create_app

    remote = None
    endpoint = cfg.get("generate_endpoint")
    if endpoint:
        remote = RemoteGeneratorConfig(endpoint=endpoint)
    state = ServiceState.load(args.snapshot, remote_generator=remote)
    app = create_app(state)
    uvicorn.run(app, host=args.host, port=args.port)
    return 0


def _cmd_refresh(args, cfg) -> int:
    snap = _load_nonempty(args.snapshot)
    old = snap.embedder
    new_spec = EmbedderSpec(
        kind=old.kind,
        dimension=args.dimension if args.dimension is not None else old.dimension,
        endpoint=old.endpoint,
        seed=args.seed if args.seed is not None else old.seed,
        batch_size=old.batch_size,
    )
    chunks = list(snap.chunks.values())
    report = refresh_embeddings(snap.store, chunks, new_spec)
    snap.embedder = new_spec
    if snap.index_config.dimension != new_spec.dimension:
        snap.index_config = dataclasses.replace(snap.index_config, dimension=new_spec.dimension)
    snap.indexes = build_partition_indexes(snap.store, snap.index_config)
    save_snapshot(snap, args.snapshot)
    print(f"re-embedded {report.re_embedded} chunks under {report.model_version}")
    return 0


_COMMANDS = {
    "ingest": _cmd_ingest,
    "build-index": _cmd_build_index,
    "query": _cmd_query,
    "suggest": _cmd_suggest,
    "eval": _cmd_eval,
    "bench": _cmd_bench,
    "serve": _cmd_serve,
    "refresh": _cmd_refresh,
}


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config) if args.config else load_config()
        return _COMMANDS[args.command](args, cfg)
    except (DataError, CasebookError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return DATA_ERROR
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return DATA_ERROR


if __name__ == "__main__":
    sys.exit(main())
