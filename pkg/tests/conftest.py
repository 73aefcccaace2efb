"""Shared fixtures: synthetic corpora and embedding-record helpers."""

from __future__ import annotations

import json
from dataclasses import dataclass
from datetime import datetime, timedelta, timezone

import numpy as np
import pytest

from casebook.embedding import hashing_spec
from casebook.ingest import PullRequest, Ticket

NOW = datetime(2026, 6, 1, 12, 0, 0, tzinfo=timezone.utc)


@dataclass(frozen=True)
class Rec:
    chunk_id: str
    vector: np.ndarray


def make_records(vectors: np.ndarray, prefix: str = "v") -> list[Rec]:
    width = len(str(len(vectors)))
    return [Rec(f"{prefix}{i:0{width}d}", vectors[i]) for i in range(len(vectors))]


def unit_vectors(n: int, dim: int, seed: int) -> np.ndarray:
    rng = np.random.Generator(np.random.PCG64(seed))
    v = rng.normal(size=(n, dim))
    return (v / np.linalg.norm(v, axis=1, keepdims=True)).astype(np.float32)


_VOCAB = (
    "render crash toggle flag deploy cache timeout login page widget "
    "session cookie thread lock race migration schema query index button "
    "scroll panel overflow memory leak socket retry queue worker config"
).split()


def synthetic_ticket(i: int, rng: np.random.Generator, created: datetime) -> Ticket:
    words = rng.choice(_VOCAB, size=8, replace=True)
    title = " ".join(words[:4])
    description = "Problem details: " + " ".join(words) + ". Fix applied to the " + words[0] + "."
    return Ticket(
        key=f"SYN-{i + 1}",
        title=title,
        description=description,
        priority="major",
        status="closed",
        resolution="fixed",
        created_at=created,
        updated_at=created + timedelta(days=1),
        comments=(),
    )


def synthetic_corpus(n_tickets: int, seed: int = 5) -> tuple[list[Ticket], list[PullRequest]]:
    rng = np.random.Generator(np.random.PCG64(seed))
    base = NOW - timedelta(days=400)
    tickets = [
        synthetic_ticket(i, rng, base + timedelta(days=int(rng.integers(0, 365))))
        for i in range(n_tickets)
    ]
    prs = [
        PullRequest(
            repo="acme/web",
            number=100 + i,
            title="Fix: " + tickets[i].title,
            body=f"Fixes {tickets[i].key}",
            commit_messages=(f"patch for {tickets[i].key.lower()}",),
            diff_text="",
            review_comments=(),
            state="merged",
            merged_at=tickets[i].updated_at + timedelta(days=2),
        )
        for i in range(0, min(5, n_tickets))
    ]
    return tickets, prs


@pytest.fixture
def hashing64():
    return hashing_spec(dimension=64, seed=9)


def jira_jsonl(tickets: list[Ticket]) -> str:
    lines = []
    for t in tickets:
        lines.append(
            json.dumps(
                {
                    "key": t.key,
                    "title": t.title,
                    "description": t.description,
                    "priority": t.priority,
                    "status": t.status,
                    "resolution": t.resolution,
                    "created_at": t.created_at.isoformat(),
                    "updated_at": t.updated_at.isoformat(),
                    "comments": [
                        {
                            "author": c.author,
                            "body": c.body,
                            "created_at": c.created_at.isoformat(),
                        }
                        for c in t.comments
                    ],
                }
            )
        )
    return "\n".join(lines) + "\n"


def github_jsonl(prs: list[PullRequest]) -> str:
    lines = []
    for p in prs:
        lines.append(
            json.dumps(
                {
                    "repo": p.repo,
                    "number": p.number,
                    "title": p.title,
                    "body": p.body,
                    "commit_messages": list(p.commit_messages),
                    "diff": p.diff_text,
                    "review_comments": list(p.review_comments),
                    "state": p.state,
                    "merged_at": p.merged_at.isoformat() if p.merged_at else None,
                }
            )
        )
    return "\n".join(lines) + "\n"
