"""Turn an evidence bundle into a resolution suggestion.

Two generators share one contract: a remote chat-style model behind a
small JSON endpoint, and a deterministic extractive synthesizer that
composes steps from evidence sentences so the pipeline works offline.
Both outputs carry lexical grounding and confidence scores.
"""

from __future__ import annotations

import itertools
import re
import threading
import time
from dataclasses import dataclass
from datetime import datetime, timezone
from importlib import resources
from typing import Mapping, Sequence

import httpx

from .errors import GenerationError, RemoteError
from .ingest import ArtifactChunk
from .lexical import tokenize
from .retrieval import EvidenceBundle

DEFAULT_BUDGET_TOKENS = 3000
GROUNDING_THRESHOLD = 0.6
ESCALATION_STEP = "No similar historical cases found; escalate for manual triage"

# Words that usually carry the fix in a resolution sentence.
RESOLUTION_MARKERS = ("fix", "resolve", "replace", "upgrade", "safeguard")

_SENTENCE_RE = re.compile(r".+?(?:\. |! |\? |\n|$)", re.S)
_STEP_LINE_RE = re.compile(r"^\s*(?:\d+[.)]|[-*•])\s+(.*\S)\s*$")

_counter = itertools.count()
_counter_lock = threading.Lock()


def _next_suggestion_id() -> str:
    with _counter_lock:
        seq = next(_counter)
    return f"sug-{time.time_ns()}-{seq}"


def load_prompt_template() -> str:
    return (
        resources.files("casebook").joinpath("assets/prompt_template.txt").read_text("utf-8")
    )


def word_count(text: str) -> int:
    """Whitespace-delimited word count: the documented token proxy."""
    return len(text.split())


def split_sentences(text: str) -> list[str]:
    """Split on '. ', '! ', '? ' and newlines, keeping delimiters attached."""
    return [m.group(0) for m in _SENTENCE_RE.finditer(text or "") if m.group(0).strip()]


@dataclass(frozen=True)
class EvidenceBlock:
    chunk_id: str
    text: str
    source_key: str
    link: str | None  # PR reference(s) when the hit's ticket has linked PRs


@dataclass(frozen=True)
class PromptPayload:
    system_instructions: str
    ticket_block: str
    evidence_blocks: tuple[EvidenceBlock, ...]
    token_count: int
    truncated: bool


@dataclass(frozen=True)
class ResolutionSuggestion:
    suggestion_id: str
    steps: tuple[str, ...]
    evidence_links: tuple[dict, ...]  # {chunk_id, source_key, pr}
    rationale: str
    grounding: float
    confidence: float
    generator: str  # "remote" | "extractive"
    created_at: datetime


@dataclass(frozen=True)
class RemoteGeneratorConfig:
    endpoint: str
    max_retries: int = 3
    backoff_seconds: float = 0.5


def _links_by_ticket(bundle: EvidenceBundle) -> dict[str, list[str]]:
    out: dict[str, list[str]] = {}
    for ticket_key, pr_id in bundle.linked_prs:
        out.setdefault(ticket_key, []).append(pr_id)
    return out


def build_prompt(
    bundle: EvidenceBundle,
    ticket_text: str,
    chunks: Mapping[str, ArtifactChunk],
    budget_tokens: int = DEFAULT_BUDGET_TOKENS,
) -> PromptPayload:
    """Assemble the prompt under a hard word budget.

    Instructions and the ticket block are always included; evidence blocks
    are admitted greedily in rank order. A block that would overflow is cut
    at the last sentence boundary that fits, or skipped when not even its
    first sentence fits.
    """
    template = load_prompt_template()
    instructions = template.split("{ticket}")[0].strip()
    ticket_block = f"Ticket:\n{ticket_text.strip()}"
    used = word_count(instructions) + word_count(ticket_block)
    if used > budget_tokens:
        raise GenerationError(
            f"budget too small: instructions + ticket need {used} words, budget {budget_tokens}"
        )
    linked = _links_by_ticket(bundle)
    blocks: list[EvidenceBlock] = []
    truncated = False
    for hit in bundle.hits:
        chunk = chunks.get(hit.chunk_id)
        if chunk is None:
            continue
        source_key = chunk.source_key
        link = ", ".join(linked[source_key]) if source_key in linked else None
        header_cost = 1  # "[source_key]" renders as one whitespace-delimited word
        body = chunk.text
        full_cost = header_cost + word_count(body)
        if used + full_cost <= budget_tokens:
            blocks.append(EvidenceBlock(hit.chunk_id, body, source_key, link))
            used += full_cost
            continue
        sentences = split_sentences(body)
        kept = ""
        for i in range(len(sentences), 0, -1):
            candidate = "".join(sentences[:i]).strip()
            if used + header_cost + word_count(candidate) <= budget_tokens:
                kept = candidate
                break
        truncated = True
        if kept:
            blocks.append(EvidenceBlock(hit.chunk_id, kept, source_key, link))
            used += header_cost + word_count(kept)
        # else: skipped entirely; keep trying later (shorter) blocks
    return PromptPayload(
        system_instructions=instructions,
        ticket_block=ticket_block,
        evidence_blocks=tuple(blocks),
        token_count=used,
        truncated=truncated,
    )


def render_prompt(payload: PromptPayload) -> str:
    evidence = "\n".join(
        f"[{b.source_key}] {b.text}" for b in payload.evidence_blocks
    ) or "(no similar historical cases found)"
    return (
        f"{payload.system_instructions}\n\n{payload.ticket_block}\n\n"
        f"Historical evidence:\n{evidence}"
    )


def generate_remote(
    payload: PromptPayload,
    config: RemoteGeneratorConfig,
    client: httpx.Client | None = None,
) -> str:
    """POST {"messages": [...]} -> {"content": "..."}; bounded retries with
    exponential backoff, then a hard error. Empty completions are errors."""
    body = {
        "messages": [
            {"role": "system", "content": payload.system_instructions},
            {
                "role": "user",
                "content": render_prompt(payload).removeprefix(
                    payload.system_instructions
                ).strip(),
            },
        ]
    }
    own_client = client is None
    http = client or httpx.Client(timeout=60.0)
    try:
        last_error: Exception | None = None
        for attempt in range(config.max_retries + 1):
            if attempt:
                time.sleep(config.backoff_seconds * 2 ** (attempt - 1))
            try:
                response = http.post(config.endpoint, json=body)
            except httpx.HTTPError as exc:
                last_error = exc
                continue
            if response.status_code != 200:
                last_error = RemoteError(f"generator returned HTTP {response.status_code}")
                continue
            content = response.json().get("content")
            if not content or not str(content).strip():
                raise GenerationError("empty generation")
            return str(content)
        raise RemoteError(
            f"generator failed after {config.max_retries + 1} attempts: {last_error}"
        )
    finally:
        if own_client:
            http.close()


def parse_suggestion(raw: str) -> tuple[list[str], str]:
    """Numbered/bulleted lines become steps; text after a 'Rationale:' marker
    becomes the rationale; unstructured text becomes a single step."""
    steps: list[str] = []
    rationale_parts: list[str] = []
    prose: list[str] = []
    in_rationale = False
    for line in (raw or "").splitlines():
        stripped = line.strip()
        if in_rationale:
            if stripped:
                rationale_parts.append(stripped)
            continue
        lowered = stripped.lower()
        if lowered.startswith("rationale:"):
            in_rationale = True
            rest = stripped[len("rationale:") :].strip()
            if rest:
                rationale_parts.append(rest)
            continue
        m = _STEP_LINE_RE.match(line)
        if m:
            steps.append(m.group(1))
        elif stripped:
            prose.append(stripped)
    if not steps:
        fallback = " ".join(prose).strip() or (raw or "").strip()
        steps = [fallback] if fallback else []
    return steps, " ".join(rationale_parts).strip()


def _resolution_sentence(text: str) -> str:
    sentences = split_sentences(text)
    if not sentences:
        return text.strip()
    for sentence in sentences:
        lowered = sentence.lower()
        if any(marker in lowered for marker in RESOLUTION_MARKERS):
            return sentence.strip()
    return sentences[0].strip()


def _evidence_pool(bundle: EvidenceBundle, chunks: Mapping[str, ArtifactChunk]) -> set[str]:
    pool: set[str] = set()
    for hit in bundle.hits:
        chunk = chunks.get(hit.chunk_id)
        if chunk is not None:
            pool.update(tokenize(chunk.text))
    for ticket_key, pr_id in bundle.linked_prs:
        pool.update(tokenize(ticket_key))
        pool.update(tokenize(pr_id))
    return pool


def grounding_score(
    steps: Sequence[str],
    bundle: EvidenceBundle,
    chunks: Mapping[str, ArtifactChunk],
) -> float:
    """Mean per-step attribution: a step counts as fully supported when at
    least 60% of its tokens occur in the evidence pool, otherwise it scores
    proportionally below 1. Empty evidence pool scores 0."""
    pool = _evidence_pool(bundle, chunks)
    if not pool or not steps:
        return 0.0
    total = 0.0
    for step in steps:
        tokens = set(tokenize(step))
        if not tokens:
            total += 1.0  # no checkable content, nothing unsupported
            continue
        ratio = len(tokens & pool) / len(tokens)
        total += 1.0 if ratio >= GROUNDING_THRESHOLD else ratio / GROUNDING_THRESHOLD
    return total / len(steps)


def confidence_score(bundle: EvidenceBundle, grounding: float) -> float:
    """Half retrieval strength (mean clamped final score of the top 3 hits),
    half grounding."""
    if not bundle.hits:
        return 0.0
    top = bundle.hits[:3]
    mean_score = sum(min(1.0, max(0.0, h.final_score)) for h in top) / len(top)
    return 0.5 * mean_score + 0.5 * grounding


def _evidence_links(
    bundle: EvidenceBundle, chunks: Mapping[str, ArtifactChunk], used_hits: Sequence
) -> tuple[dict, ...]:
    linked = _links_by_ticket(bundle)
    out = []
    for hit in used_hits:
        chunk = chunks.get(hit.chunk_id)
        if chunk is None:
            continue
        prs = linked.get(chunk.source_key)
        out.append(
            {
                "chunk_id": hit.chunk_id,
                "source_key": chunk.source_key,
                "pr": ", ".join(prs) if prs else None,
            }
        )
    return tuple(out)


def generate_extractive(
    bundle: EvidenceBundle,
    chunks: Mapping[str, ArtifactChunk],
    now: datetime | None = None,
) -> ResolutionSuggestion:
    """Deterministic synthesizer: quote the resolution-bearing sentence of
    each top hit, add a step for linked PRs, cite sources in the rationale."""
    now = now or datetime.now(timezone.utc)
    if not bundle.hits:
        return ResolutionSuggestion(
            suggestion_id=_next_suggestion_id(),
            steps=(ESCALATION_STEP,),
            evidence_links=(),
            rationale="No historical evidence retrieved.",
            grounding=0.0,
            confidence=0.0,
            generator="extractive",
            created_at=now,
        )
    used = [h for h in bundle.hits[:3] if h.chunk_id in chunks]
    steps = [_resolution_sentence(chunks[h.chunk_id].text) for h in used]
    if bundle.linked_prs:
        prs = ", ".join(pr_id for _, pr_id in bundle.linked_prs)
        steps.append(f"Apply the change from {prs}")
    source_keys = []
    for hit in used:
        key = chunks[hit.chunk_id].source_key
        if key not in source_keys:
            source_keys.append(key)
    rationale = "Derived from historical cases: " + ", ".join(source_keys)
    grounding = grounding_score(steps, bundle, chunks)
    return ResolutionSuggestion(
        suggestion_id=_next_suggestion_id(),
        steps=tuple(steps),
        evidence_links=_evidence_links(bundle, chunks, used),
        rationale=rationale,
        grounding=grounding,
        confidence=confidence_score(bundle, grounding),
        generator="extractive",
        created_at=now,
    )


def generate(
    bundle: EvidenceBundle,
    ticket_text: str,
    chunks: Mapping[str, ArtifactChunk],
    generator: str = "extractive",
    remote: RemoteGeneratorConfig | None = None,
    budget_tokens: int = DEFAULT_BUDGET_TOKENS,
    fallback_to_extractive: bool = True,
    client: httpx.Client | None = None,
    now: datetime | None = None,
) -> ResolutionSuggestion:
    """Produce a suggestion with the requested generator, optionally falling
    back to the extractive path when the remote one hard-fails."""
    if generator == "extractive":
        return generate_extractive(bundle, chunks, now=now)
    if generator != "remote":
        raise GenerationError(f"unknown generator {generator!r}")
    if remote is None:
        raise GenerationError("remote generator unconfigured")
    now = now or datetime.now(timezone.utc)
    payload = build_prompt(bundle, ticket_text, chunks, budget_tokens)
    try:
        raw = generate_remote(payload, remote, client=client)
    except (RemoteError, GenerationError):
        if not fallback_to_extractive:
            raise
        return generate_extractive(bundle, chunks, now=now)
    steps, rationale = parse_suggestion(raw)
    if not steps:
        if not fallback_to_extractive:
            raise GenerationError("empty generation")
        return generate_extractive(bundle, chunks, now=now)
    used = [h for h in bundle.hits if h.chunk_id in chunks]
    grounding = grounding_score(steps, bundle, chunks)
    return ResolutionSuggestion(
        suggestion_id=_next_suggestion_id(),
        steps=tuple(steps),
        evidence_links=_evidence_links(bundle, chunks, used),
        rationale=rationale or "Synthesized from the retrieved evidence.",
        grounding=grounding,
        confidence=confidence_score(bundle, grounding),
        generator="remote",
        created_at=now,
    )
