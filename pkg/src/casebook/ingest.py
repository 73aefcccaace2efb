"""Parsing and normalization of issue-tracker and pull-request export dumps.

Input dumps are JSONL: one self-contained record per line (see README for
the exact field lists). Parsed artifacts are normalized into text chunks,
one index partition per artifact type (ticket, comment, pr).
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from datetime import datetime, timezone
from typing import Callable, Iterable, Sequence

from .errors import IngestError

PRIORITIES = frozenset({"blocker", "critical", "major", "minor", "trivial", "unknown"})
PR_STATES = frozenset({"open", "merged", "closed"})
PARTITIONS = ("ticket", "comment", "pr")

# Issue keys like PROJECT-123: 2-10 uppercase letters, dash, 1-8 digits.
# Lookarounds reject keys embedded in longer alphanumeric runs ("XABC-1x").
ISSUE_KEY_RE = re.compile(r"(?<![A-Za-z0-9])([A-Z]{2,10}-[0-9]{1,8})(?![A-Za-z0-9])")

# Template headers stripped from ticket descriptions; section bodies are kept.
DEFAULT_BOILERPLATE_HEADERS = (
    "Steps to reproduce",
    "Expected result",
    "Actual result",
    "Environment",
)

EPOCH = datetime(1970, 1, 1, tzinfo=timezone.utc)

# A line is treated as diagnostic output (stack trace / error log) and kept
# verbatim when it carries one of these markers.
_FRAME_RE = re.compile(r"\bat \S+\(")
_DIAG_MARKERS = ("Exception", "Traceback", "Error:")


@dataclass(frozen=True)
class Comment:
    author: str
    body: str
    created_at: datetime
    contains_stacktrace: bool = False


@dataclass(frozen=True)
class Ticket:
    key: str
    title: str
    description: str
    priority: str
    status: str
    resolution: str | None
    created_at: datetime
    updated_at: datetime
    comments: tuple[Comment, ...] = ()


@dataclass(frozen=True)
class PullRequest:
    repo: str
    number: int
    title: str
    body: str
    commit_messages: tuple[str, ...]
    diff_text: str
    review_comments: tuple[str, ...]
    state: str
    merged_at: datetime | None = None

    @property
    def pr_id(self) -> str:
        return f"{self.repo}#{self.number}"


@dataclass(frozen=True)
class LinkEdge:
    ticket_key: str
    pr_repo: str
    pr_number: int
    source_field: str  # pr_title | pr_body | commit_message

    @property
    def pr_id(self) -> str:
        return f"{self.pr_repo}#{self.pr_number}"


@dataclass(frozen=True)
class ArtifactChunk:
    chunk_id: str
    partition: str  # ticket | comment | pr
    text: str
    timestamp: datetime
    source_key: str  # ticket key, or "repo#number" for PRs


@dataclass(frozen=True)
class DiffSummary:
    changed_functions: tuple[str, ...]
    files_touched: tuple[str, ...]
    hunk_count: int


def parse_timestamp(raw: str, where: str) -> datetime:
    """Parse an RFC 3339 timestamp into an aware UTC datetime."""
    try:
        ts = datetime.fromisoformat(raw.replace("Z", "+00:00"))
    except (ValueError, AttributeError, TypeError):
        raise IngestError(f"{where}: bad timestamp {raw!r}") from None
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=timezone.utc)
    return ts.astimezone(timezone.utc)


def is_diagnostic_line(line: str) -> bool:
    """True when a line looks like stack-trace or error-log output."""
    if any(marker in line for marker in _DIAG_MARKERS):
        return True
    return _FRAME_RE.search(line) is not None


def _iter_lines(stream) -> Iterable[str]:
    if isinstance(stream, str):
        return stream.splitlines()
    return stream


def parse_jira_export(stream) -> list[Ticket]:
    """Parse a JIRA JSONL export into tickets, in file order.

    Unknown fields are ignored; missing optional fields get defaults
    (priority -> "unknown"). Malformed records raise with their 1-based
    line number; duplicate keys raise naming the key.
    """
    tickets: list[Ticket] = []
    seen: set[str] = set()
    for lineno, line in enumerate(_iter_lines(stream), start=1):
        if not line.strip():
            continue
        try:
            raw = json.loads(line)
        except json.JSONDecodeError as exc:
            raise IngestError(f"line {lineno}: malformed record ({exc.msg})") from None
        if not isinstance(raw, dict):
            raise IngestError(f"line {lineno}: malformed record (not an object)")
        where = f"line {lineno}"
        key = raw.get("key")
        if not isinstance(key, str) or not key:
            raise IngestError(f"{where}: missing key")
        if not ISSUE_KEY_RE.fullmatch(key):
            raise IngestError(f"{where}: key {key!r} does not match the issue-key pattern")
        if key in seen:
            raise IngestError(f"{where}: duplicate ticket key {key!r}")
        seen.add(key)
        if "created_at" not in raw or "updated_at" not in raw:
            raise IngestError(f"{where}: missing created_at/updated_at")
        created = parse_timestamp(raw["created_at"], where)
        updated = parse_timestamp(raw["updated_at"], where)
        if created > updated:
            raise IngestError(f"{where}: created_at after updated_at for {key!r}")
        priority = raw.get("priority") or "unknown"
        if priority not in PRIORITIES:
            priority = "unknown"
        comments = []
        for ci, rc in enumerate(raw.get("comments") or []):
            if not isinstance(rc, dict):
                raise IngestError(f"{where}: comment {ci} is not an object")
            body = str(rc.get("body") or "")
            comments.append(
                Comment(
                    author=str(rc.get("author") or ""),
                    body=body,
                    created_at=parse_timestamp(rc.get("created_at", ""), f"{where} comment {ci}"),
                    contains_stacktrace=any(is_diagnostic_line(l) for l in body.splitlines()),
                )
            )
        tickets.append(
            Ticket(
                key=key,
                title=str(raw.get("title") or ""),
                description=str(raw.get("description") or ""),
                priority=priority,
                status=str(raw.get("status") or ""),
                resolution=raw.get("resolution"),
                created_at=created,
                updated_at=updated,
                comments=tuple(comments),
            )
        )
    return tickets


def parse_github_export(stream) -> list[PullRequest]:
    """Parse a GitHub PR JSONL export, mirroring parse_jira_export semantics."""
    prs: list[PullRequest] = []
    seen: set[tuple[str, int]] = set()
    for lineno, line in enumerate(_iter_lines(stream), start=1):
        if not line.strip():
            continue
        try:
            raw = json.loads(line)
        except json.JSONDecodeError as exc:
            raise IngestError(f"line {lineno}: malformed record ({exc.msg})") from None
        if not isinstance(raw, dict):
            raise IngestError(f"line {lineno}: malformed record (not an object)")
        where = f"line {lineno}"
        repo = raw.get("repo")
        number = raw.get("number")
        if not isinstance(repo, str) or not repo:
            raise IngestError(f"{where}: missing repo")
        if not isinstance(number, int) or number < 1:
            raise IngestError(f"{where}: number must be a positive integer")
        if (repo, number) in seen:
            raise IngestError(f"{where}: duplicate pull request {repo}#{number}")
        seen.add((repo, number))
        state = raw.get("state") or "open"
        if state not in PR_STATES:
            raise IngestError(f"{where}: unknown state {state!r}")
        merged_raw = raw.get("merged_at")
        if state == "merged" and not merged_raw:
            raise IngestError(f"{where}: merged_at required for merged {repo}#{number}")
        if state != "merged" and merged_raw:
            raise IngestError(f"{where}: merged_at only valid when state is merged")
        merged_at = parse_timestamp(merged_raw, where) if merged_raw else None
        prs.append(
            PullRequest(
                repo=repo,
                number=number,
                title=str(raw.get("title") or ""),
                body=str(raw.get("body") or ""),
                commit_messages=tuple(str(m) for m in (raw.get("commit_messages") or [])),
                diff_text=str(raw.get("diff") or ""),
                review_comments=tuple(str(c) for c in (raw.get("review_comments") or [])),
                state=state,
                merged_at=merged_at,
            )
        )
    return prs


def extract_issue_keys(text: str) -> list[str]:
    """All issue keys in the text, first-occurrence order, deduplicated."""
    seen: set[str] = set()
    keys: list[str] = []
    for match in ISSUE_KEY_RE.finditer(text or ""):
        key = match.group(1)
        if key not in seen:
            seen.add(key)
            keys.append(key)
    return keys


def link_tickets_prs(
    tickets: Sequence[Ticket],
    prs: Sequence[PullRequest],
    diagnostics: Callable[[dict], None] | None = None,
) -> list[LinkEdge]:
    """Join tickets to PRs through issue keys found in PR text.

    Fields are scanned in order title, body, commit messages; source_field
    records the first field where a key occurred. Keys that resolve to no
    ticket produce one dangling_key warning per (key, pr) on the
    diagnostics callback instead of an edge.
    """
    known = {t.key for t in tickets}
    edges: list[LinkEdge] = []
    seen_edges: set[tuple[str, str, int]] = set()
    for pr in prs:
        warned: set[str] = set()
        fields = (
            ("pr_title", pr.title),
            ("pr_body", pr.body),
            ("commit_message", "\n".join(pr.commit_messages)),
        )
        for source_field, text in fields:
            for key in extract_issue_keys(text):
                if key not in known:
                    if key not in warned:
                        warned.add(key)
                        if diagnostics is not None:
                            diagnostics({"kind": "dangling_key", "key": key, "pr": pr.pr_id})
                    continue
                edge_id = (key, pr.repo, pr.number)
                if edge_id in seen_edges:
                    continue
                seen_edges.add(edge_id)
                edges.append(LinkEdge(key, pr.repo, pr.number, source_field))
    return edges


def _is_boilerplate_header(line: str, headers: Sequence[str]) -> bool:
    stripped = line.strip().strip("*#:").strip()
    return any(stripped.lower() == h.lower() for h in headers)


def clean_text(text: str, headers: Sequence[str] = DEFAULT_BOILERPLATE_HEADERS) -> str:
    """Normalize artifact text for indexing.

    Boilerplate header lines are dropped (their section bodies stay),
    diagnostic lines are preserved verbatim, everything else is
    lowercased. Whitespace within lines is collapsed and blank lines are
    removed. Idempotent: cleaning its own output is a no-op.
    """
    out: list[str] = []
    for line in (text or "").splitlines():
        collapsed = " ".join(line.split())
        if not collapsed:
            continue
        if _is_boilerplate_header(collapsed, headers):
            continue
        out.append(collapsed if is_diagnostic_line(collapsed) else collapsed.lower())
    return "\n".join(out)


def normalize_ticket(
    t: Ticket, headers: Sequence[str] = DEFAULT_BOILERPLATE_HEADERS
) -> list[ArtifactChunk]:
    """One ticket-partition chunk plus one comment-partition chunk per
    non-empty comment. Chunks that clean down to empty text are dropped."""
    chunks: list[ArtifactChunk] = []
    body = clean_text(f"{t.title}\n{t.description}", headers)
    if body:
        chunks.append(
            ArtifactChunk(
                chunk_id=f"ticket:{t.key}",
                partition="ticket",
                text=body,
                timestamp=t.updated_at,
                source_key=t.key,
            )
        )
    for i, comment in enumerate(t.comments):
        text = clean_text(comment.body, headers)
        if not text:
            continue
        chunks.append(
            ArtifactChunk(
                chunk_id=f"comment:{t.key}:{i}",
                partition="comment",
                text=text,
                timestamp=comment.created_at,
                source_key=t.key,
            )
        )
    return chunks


# Function-declaration heuristic for added/removed diff lines.
_DECL_RE = re.compile(
    r"^(?:(?:export|public|private|protected|static|async)\s+)*"
    r"(?:def|function|func|fn)\s+[\w$]+\s*\("
)
_HUNK_RE = re.compile(r"^@@ -\d+(?:,\d+)? \+\d+(?:,\d+)? @@(.*)$")
_FILE_RE = re.compile(r"^\+\+\+ b/(.+)$")


def summarize_diff(diff_text: str) -> DiffSummary:
    """Condense a unified diff to touched files and changed functions.

    Function names come from hunk-header context plus added/removed lines
    matching a declaration heuristic; no language parser is involved.
    Non-diff text yields an empty summary.
    """
    files: set[str] = set()
    functions: set[str] = set()
    hunks = 0
    for line in (diff_text or "").splitlines():
        m = _FILE_RE.match(line)
        if m:
            files.add(m.group(1).strip())
            continue
        m = _HUNK_RE.match(line)
        if m:
            hunks += 1
            context = m.group(1).strip()
            if context:
                functions.add(context)
            continue
        if line.startswith(("+", "-")) and not line.startswith(("+++", "---")):
            content = line[1:].strip()
            if _DECL_RE.match(content):
                functions.add(content)
    return DiffSummary(
        changed_functions=tuple(sorted(functions)),
        files_touched=tuple(sorted(files)),
        hunk_count=hunks,
    )


def normalize_pr(
    pr: PullRequest,
    summary: DiffSummary,
    headers: Sequence[str] = DEFAULT_BOILERPLATE_HEADERS,
    fallback_timestamp: datetime = EPOCH,
) -> ArtifactChunk | None:
    """One pr-partition chunk from title, body, commits, changed functions
    and review comments. Returns None when everything cleans to empty."""
    parts = [pr.title, pr.body, *pr.commit_messages, *summary.changed_functions, *pr.review_comments]
    text = clean_text("\n".join(p for p in parts if p), headers)
    if not text:
        return None
    return ArtifactChunk(
        chunk_id=f"pr:{pr.pr_id}",
        partition="pr",
        text=text,
        timestamp=pr.merged_at if pr.merged_at is not None else fallback_timestamp,
        source_key=pr.pr_id,
    )


def dedupe_chunks(chunks: Sequence[ArtifactChunk]) -> list[ArtifactChunk]:
    """Drop exact duplicates (same partition + normalized text), keeping the
    chunk with the earliest timestamp (ties: smallest chunk_id)."""
    best: dict[tuple[str, str], ArtifactChunk] = {}
    order: list[tuple[str, str]] = []
    for chunk in chunks:
        dup_key = (chunk.partition, chunk.text)
        current = best.get(dup_key)
        if current is None:
            order.append(dup_key)
            best[dup_key] = chunk
        elif (chunk.timestamp, chunk.chunk_id) < (current.timestamp, current.chunk_id):
            best[dup_key] = chunk
    return [best[k] for k in order]


def normalize_corpus(
    tickets: Sequence[Ticket],
    prs: Sequence[PullRequest],
    headers: Sequence[str] = DEFAULT_BOILERPLATE_HEADERS,
) -> list[ArtifactChunk]:
    """Normalize a full parsed corpus into deduplicated chunks."""
    chunks: list[ArtifactChunk] = []
    for t in tickets:
        chunks.extend(normalize_ticket(t, headers))
    for pr in prs:
        chunk = normalize_pr(pr, summarize_diff(pr.diff_text), headers)
        if chunk is not None:
            chunks.append(chunk)
    return dedupe_chunks(chunks)
