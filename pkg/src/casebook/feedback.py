"""Human feedback loop: suggestion records, verdict events, and the
per-chunk accept/reject stats that drive retrieval boosts."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from datetime import datetime

from .errors import SnapshotError
from .generation import ResolutionSuggestion
from .retrieval import EvidenceBundle

SUGGESTIONS_LOG = "suggestions.jsonl"
FEEDBACK_LOG = "feedback.jsonl"

VERDICTS = ("accept", "edit", "reject", "upvote")
# edit counts as acceptance: the suggestion was useful enough to refine
_ACCEPT_VERDICTS = frozenset({"accept", "upvote", "edit"})


@dataclass(frozen=True)
class FeedbackEvent:
    suggestion_id: str
    verdict: str
    actor: str
    created_at: datetime
    edited_steps: tuple[str, ...] | None = None

    def __post_init__(self):
        if self.verdict not in VERDICTS:
            raise ValueError(f"unknown verdict {self.verdict!r}")
        if self.verdict == "edit" and not self.edited_steps:
            raise ValueError("edit verdict requires edited_steps")


@dataclass
class SuggestionRecord:
    suggestion: ResolutionSuggestion
    evidence: tuple[tuple[str, float], ...]  # (chunk_id, final_score) snapshot
    feedback: list[FeedbackEvent] = field(default_factory=list)


class FeedbackStore:
    """Append-only store of suggestions and their feedback events."""

    def __init__(self):
        self._records: dict[str, SuggestionRecord] = {}

    def __len__(self) -> int:
        return len(self._records)

    def __contains__(self, suggestion_id: str) -> bool:
        return suggestion_id in self._records

    def get(self, suggestion_id: str) -> SuggestionRecord | None:
        return self._records.get(suggestion_id)

    def add_suggestion(self, suggestion: ResolutionSuggestion, bundle: EvidenceBundle):
        if suggestion.suggestion_id in self._records:
            raise ValueError(f"duplicate suggestion {suggestion.suggestion_id!r}")
        evidence = tuple((h.chunk_id, h.final_score) for h in bundle.hits)
        self._records[suggestion.suggestion_id] = SuggestionRecord(suggestion, evidence)

    def add_feedback(self, event: FeedbackEvent):
        record = self._records.get(event.suggestion_id)
        if record is None:
            raise KeyError(f"unknown suggestion {event.suggestion_id!r}")
        record.feedback.append(event)

    def records(self) -> list[SuggestionRecord]:
        return list(self._records.values())

    def stats(self) -> dict[str, tuple[int, int]]:
        """Per-chunk (accepts, rejects): accept/upvote/edit on a suggestion
        count as accepts for every evidence chunk it cited; reject likewise."""
        counts: dict[str, list[int]] = {}
        for record in self._records.values():
            for event in record.feedback:
                slot = 0 if event.verdict in _ACCEPT_VERDICTS else 1
                for chunk_id, _ in record.evidence:
                    pair = counts.setdefault(chunk_id, [0, 0])
                    pair[slot] += 1
        return {cid: (a, r) for cid, (a, r) in counts.items()}

    def verdict_counts(self) -> dict[str, int]:
        out = {v: 0 for v in VERDICTS}
        for record in self._records.values():
            for event in record.feedback:
                out[event.verdict] += 1
        return out


def feedback_stats(store: FeedbackStore) -> dict[str, tuple[int, int]]:
    return store.stats()


# ---------------------------------------------------------------------------
# JSONL persistence (append-only logs inside the service snapshot directory)


def suggestion_to_json(record: SuggestionRecord) -> str:
    s = record.suggestion
    return json.dumps(
        {
            "suggestion_id": s.suggestion_id,
            "steps": list(s.steps),
            "evidence_links": list(s.evidence_links),
            "rationale": s.rationale,
            "grounding": s.grounding,
            "confidence": s.confidence,
            "generator": s.generator,
            "created_at": s.created_at.isoformat(),
            "evidence": [[cid, score] for cid, score in record.evidence],
        }
    )


def feedback_to_json(event: FeedbackEvent) -> str:
    return json.dumps(
        {
            "suggestion_id": event.suggestion_id,
            "verdict": event.verdict,
            "actor": event.actor,
            "created_at": event.created_at.isoformat(),
            "edited_steps": list(event.edited_steps) if event.edited_steps else None,
        }
    )


def _parse_line(line: str, path: str, lineno: int) -> dict:
    try:
        raw = json.loads(line)
    except json.JSONDecodeError:
        raise SnapshotError(f"{path}: malformed record at line {lineno}") from None
    if not isinstance(raw, dict):
        raise SnapshotError(f"{path}: malformed record at line {lineno}")
    return raw


def load_feedback_store(suggestions_path, feedback_path) -> FeedbackStore:
    """Replay the append-only logs; a torn trailing line is a load error."""
    store = FeedbackStore()
    if suggestions_path.exists():
        with open(suggestions_path, "r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                raw = _parse_line(line, str(suggestions_path), lineno)
                try:
                    suggestion = ResolutionSuggestion(
                        suggestion_id=raw["suggestion_id"],
                        steps=tuple(raw["steps"]),
                        evidence_links=tuple(raw["evidence_links"]),
                        rationale=raw["rationale"],
                        grounding=float(raw["grounding"]),
                        confidence=float(raw["confidence"]),
                        generator=raw["generator"],
                        created_at=datetime.fromisoformat(raw["created_at"]),
                    )
                    evidence = tuple((cid, float(score)) for cid, score in raw["evidence"])
                except (KeyError, TypeError, ValueError):
                    raise SnapshotError(
                        f"{suggestions_path}: malformed record at line {lineno}"
                    ) from None
                store._records[suggestion.suggestion_id] = SuggestionRecord(
                    suggestion, evidence
                )
    if feedback_path.exists():
        with open(feedback_path, "r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                raw = _parse_line(line, str(feedback_path), lineno)
                try:
                    event = FeedbackEvent(
                        suggestion_id=raw["suggestion_id"],
                        verdict=raw["verdict"],
                        actor=raw["actor"],
                        created_at=datetime.fromisoformat(raw["created_at"]),
                        edited_steps=tuple(raw["edited_steps"]) if raw.get("edited_steps") else None,
                    )
                    store.add_feedback(event)
                except (KeyError, TypeError, ValueError) as exc:
                    raise SnapshotError(
                        f"{feedback_path}: bad record at line {lineno}: {exc}"
                    ) from None
    return store
