"""HTTP service: query/suggest endpoints, webhook handlers for the tracker
integrations, the durable feedback loop, and service metrics.

Retrieval runs read-only against the loaded snapshot; suggestion and
feedback appends are serialized through a writer lock and flushed to the
snapshot directory's append-only logs before the response is sent.
"""

from __future__ import annotations

import os
import threading
from datetime import datetime, timezone
from pathlib import Path

from fastapi import FastAPI
from fastapi.exceptions import RequestValidationError
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse, Response

from . import __version__, schemas
from .errors import GenerationError, RemoteError
from .feedback import (
    FEEDBACK_LOG,
    SUGGESTIONS_LOG,
    FeedbackEvent,
    FeedbackStore,
    feedback_to_json,
    load_feedback_store,
    suggestion_to_json,
)
from .generation import RemoteGeneratorConfig, ResolutionSuggestion, generate
from .ingest import extract_issue_keys
from .retrieval import EvidenceBundle, QuerySpec, RetrievalContext, retrieve
from .snapshot import Snapshot, load_snapshot


class ServiceState:
    """Loaded snapshot plus the mutable feedback side of the service."""

    def __init__(
        self,
        snapshot: Snapshot,
        directory: str | Path,
        feedback: FeedbackStore,
        remote_generator: RemoteGeneratorConfig | None = None,
    ):
        self.snapshot = snapshot
        self.directory = Path(directory)
        self.feedback = feedback
        self.remote_generator = remote_generator
        self._write_lock = threading.Lock()
        self._counter_lock = threading.Lock()
        self.queries_served = 0
        self.suggestions_generated = 0

    @classmethod
    def load(
        cls, directory: str | Path, remote_generator: RemoteGeneratorConfig | None = None
    ) -> "ServiceState":
        directory = Path(directory)
        snapshot = load_snapshot(directory)
        feedback = load_feedback_store(
            directory / SUGGESTIONS_LOG, directory / FEEDBACK_LOG
        )
        return cls(snapshot, directory, feedback, remote_generator)

    # ------------------------------------------------------------------

    def context(self) -> RetrievalContext:
        return RetrievalContext(
            chunks=self.snapshot.chunks,
            dense=self.snapshot.indexes,
            lexical=self.snapshot.lexical,
            links=self.snapshot.links,
            embedder=self.snapshot.embedder,
            model_version=self.snapshot.store.model_version,
            feedback_stats=self.feedback.stats(),
        )

    def run_query(self, text: str, k: int | None = None) -> EvidenceBundle:
        spec = QuerySpec(
            text=text,
            now=datetime.now(timezone.utc),
            k_final=k if k is not None else 8,
        )
        bundle = retrieve(spec, self.context())
        with self._counter_lock:
            self.queries_served += 1
        return bundle

    def run_suggest(
        self, text: str, generator: str = "extractive", k: int | None = None
    ) -> tuple[ResolutionSuggestion, EvidenceBundle]:
        spec = QuerySpec(
            text=text,
            now=datetime.now(timezone.utc),
            k_final=k if k is not None else 8,
        )
        bundle = retrieve(spec, self.context())
        suggestion = generate(
            bundle,
            text,
            self.snapshot.chunks,
            generator=generator,
            remote=self.remote_generator,
        )
        self._persist_suggestion(suggestion, bundle)
        with self._counter_lock:
            self.suggestions_generated += 1
        return suggestion, bundle

    def _append_line(self, name: str, line: str):
        path = self.directory / name
        with open(path, "a", encoding="utf-8") as fh:
            fh.write(line + "\n")
            fh.flush()
            os.fsync(fh.fileno())

    def _persist_suggestion(self, suggestion: ResolutionSuggestion, bundle: EvidenceBundle):
        with self._write_lock:
            self.feedback.add_suggestion(suggestion, bundle)
            record = self.feedback.get(suggestion.suggestion_id)
            self._append_line(SUGGESTIONS_LOG, suggestion_to_json(record))

    def add_feedback(self, event: FeedbackEvent):
        with self._write_lock:
            self.feedback.add_feedback(event)  # raises KeyError on unknown id
            self._append_line(FEEDBACK_LOG, feedback_to_json(event))

    def metrics(self) -> dict:
        verdicts = self.feedback.verdict_counts()
        total = sum(verdicts.values())
        accepted = verdicts["accept"] + verdicts["upvote"] + verdicts["edit"]
        return {
            "queries_served": self.queries_served,
            "suggestions_generated": self.suggestions_generated,
            "feedback_events": total,
            "verdicts": verdicts,
            "acceptance_rate": (accepted / total) if total else 0.0,
        }


# ---------------------------------------------------------------------------
# view assembly


def _hit_views(state: ServiceState, bundle: EvidenceBundle) -> list[schemas.RankedHitView]:
    views = []
    for hit in bundle.hits:
        chunk = state.snapshot.chunks[hit.chunk_id]
        views.append(
            schemas.RankedHitView(
                chunk_id=hit.chunk_id,
                partition=hit.partition,
                source_key=chunk.source_key,
                dense_score=hit.dense_score,
                sparse_rank=hit.sparse_rank,
                overlap=hit.overlap,
                temporal_multiplier=hit.temporal_multiplier,
                feedback_boost=hit.feedback_boost,
                final_score=hit.final_score,
                text=chunk.text,
            )
        )
    return views


def _linked_pr_views(bundle: EvidenceBundle) -> list[schemas.LinkedPrView]:
    return [schemas.LinkedPrView(ticket_key=t, pr=p) for t, p in bundle.linked_prs]


def _suggestion_view(suggestion: ResolutionSuggestion) -> schemas.SuggestionView:
    return schemas.SuggestionView(
        suggestion_id=suggestion.suggestion_id,
        steps=list(suggestion.steps),
        evidence_links=[schemas.EvidenceLinkView(**link) for link in suggestion.evidence_links],
        rationale=suggestion.rationale,
        grounding=suggestion.grounding,
        confidence=suggestion.confidence,
        generator=suggestion.generator,
        created_at=suggestion.created_at,
    )


def format_comment(suggestion: ResolutionSuggestion, bundle: EvidenceBundle) -> str:
    """The comment body a tracker bot would post for this suggestion."""
    lines = [
        f"Suggested resolution (confidence {suggestion.confidence:.2f}, "
        f"grounding {suggestion.grounding:.2f}):"
    ]
    for i, step in enumerate(suggestion.steps, start=1):
        lines.append(f"{i}. {step}")
    evidence = []
    for link in suggestion.evidence_links:
        entry = link["source_key"]
        if link.get("pr"):
            entry += f" (PR {link['pr']})"
        evidence.append(entry)
    for ticket_key, pr in bundle.linked_prs:
        entry = f"{pr} (fixes {ticket_key})"
        if entry not in evidence:
            evidence.append(entry)
    if evidence:
        lines.append("Evidence: " + "; ".join(evidence))
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# app factory


def create_app(state: ServiceState) -> FastAPI:
    app = FastAPI(title="casebook", version=__version__)
    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["*"], allow_headers=["*"]
    )
    app.state.service = state

    @app.exception_handler(RequestValidationError)
    async def _validation_handler(request, exc: RequestValidationError):
        errors = exc.errors()
        field = ".".join(str(p) for p in errors[0]["loc"] if p != "body") if errors else "body"
        return JSONResponse(status_code=400, content={"detail": f"invalid field: {field}"})

    @app.get("/health", response_model=schemas.HealthResponse)
    def health():
        return {"status": "ok"}

    @app.post("/query", response_model=schemas.QueryResponse)
    def query(request: schemas.QueryRequest):
        bundle = state.run_query(request.text, request.k)
        return schemas.QueryResponse(
            hits=_hit_views(state, bundle),
            linked_prs=_linked_pr_views(bundle),
            retrieved_at=bundle.retrieved_at,
        )

    @app.post("/suggest", response_model=schemas.SuggestResponse)
    def suggest(request: schemas.SuggestRequest):
        if request.generator == "remote" and state.remote_generator is None:
            return JSONResponse(
                status_code=409, content={"detail": "remote generator unconfigured"}
            )
        try:
            suggestion, bundle = state.run_suggest(request.text, request.generator, request.k)
        except (RemoteError, GenerationError) as exc:
            return JSONResponse(status_code=502, content={"detail": str(exc)})
        view = _suggestion_view(suggestion)
        return schemas.SuggestResponse(
            **view.model_dump(),
            hits=_hit_views(state, bundle),
            linked_prs=_linked_pr_views(bundle),
        )

    @app.get("/suggestions/{suggestion_id}", response_model=schemas.SuggestionRecordView)
    def get_suggestion(suggestion_id: str):
        record = state.feedback.get(suggestion_id)
        if record is None:
            return JSONResponse(
                status_code=404, content={"detail": f"unknown suggestion {suggestion_id!r}"}
            )
        return schemas.SuggestionRecordView(
            suggestion=_suggestion_view(record.suggestion),
            evidence=list(record.evidence),
            feedback=[
                schemas.FeedbackEventView(
                    verdict=e.verdict,
                    actor=e.actor,
                    created_at=e.created_at,
                    edited_steps=list(e.edited_steps) if e.edited_steps else None,
                )
                for e in record.feedback
            ],
        )

    @app.post("/feedback", status_code=204)
    def feedback(request: schemas.FeedbackRequest):
        if request.verdict == "edit" and not request.edited_steps:
            return JSONResponse(
                status_code=400, content={"detail": "invalid field: edited_steps"}
            )
        event = FeedbackEvent(
            suggestion_id=request.suggestion_id,
            verdict=request.verdict,
            actor=request.actor,
            created_at=datetime.now(timezone.utc),
            edited_steps=tuple(request.edited_steps) if request.edited_steps else None,
        )
        try:
            state.add_feedback(event)
        except KeyError:
            return JSONResponse(
                status_code=404,
                content={"detail": f"unknown suggestion {request.suggestion_id!r}"},
            )
        return Response(status_code=204)

    @app.get("/metrics", response_model=schemas.MetricsResponse)
    def metrics():
        return state.metrics()

    @app.post("/webhooks/jira", response_model=schemas.WebhookResponse)
    def webhook_jira(payload: schemas.JiraWebhook):
        issue = payload.issue
        text = f"{issue.title}\n{issue.description}".strip() or issue.key
        suggestion, bundle = state.run_suggest(text, "extractive")
        return schemas.WebhookResponse(
            comment=format_comment(suggestion, bundle),
            suggestion_id=suggestion.suggestion_id,
        )

    @app.post("/webhooks/github", response_model=schemas.WebhookResponse)
    def webhook_github(payload: schemas.GithubWebhook):
        text = f"{payload.title}\n{payload.body}".strip()
        # pull referenced tickets into the query so their history surfaces
        referenced = []
        for key in extract_issue_keys(f"{payload.title}\n{payload.body}"):
            chunk = state.snapshot.chunks.get(f"ticket:{key}")
            if chunk is not None:
                referenced.append(chunk.text)
        query_text = "\n".join([text, *referenced]).strip() or f"{payload.repo}#{payload.number}"
        suggestion, bundle = state.run_suggest(query_text, "extractive")
        return schemas.WebhookResponse(
            comment=format_comment(suggestion, bundle),
            suggestion_id=suggestion.suggestion_id,
        )

    return app
