"""Pydantic request/response models for the HTTP API."""

from __future__ import annotations

from datetime import datetime
from typing import Literal, Optional

from pydantic import BaseModel, Field


class QueryRequest(BaseModel):
    text: str = Field(min_length=1)
    k: Optional[int] = Field(default=None, ge=1)


class RankedHitView(BaseModel):
    chunk_id: str
    partition: str
    source_key: str
    dense_score: float
    sparse_rank: Optional[int]
    overlap: float
    temporal_multiplier: float
    feedback_boost: float
    final_score: float
    text: str


class LinkedPrView(BaseModel):
    ticket_key: str
    pr: str


class QueryResponse(BaseModel):
    hits: list[RankedHitView]
    linked_prs: list[LinkedPrView]
    retrieved_at: datetime


class SuggestRequest(BaseModel):
    text: str = Field(min_length=1)
    generator: Literal["remote", "extractive"] = "extractive"
    k: Optional[int] = Field(default=None, ge=1)


class EvidenceLinkView(BaseModel):
    chunk_id: str
    source_key: str
    pr: Optional[str] = None


class SuggestionView(BaseModel):
    suggestion_id: str
    steps: list[str]
    evidence_links: list[EvidenceLinkView]
    rationale: str
    grounding: float
    confidence: float
    generator: str
    created_at: datetime


class SuggestResponse(SuggestionView):
    hits: list[RankedHitView]
    linked_prs: list[LinkedPrView]


class FeedbackEventView(BaseModel):
    verdict: str
    actor: str
    created_at: datetime
    edited_steps: Optional[list[str]] = None


class SuggestionRecordView(BaseModel):
    suggestion: SuggestionView
    evidence: list[tuple[str, float]]
    feedback: list[FeedbackEventView]


class FeedbackRequest(BaseModel):
    suggestion_id: str
    verdict: Literal["accept", "edit", "reject", "upvote"]
    actor: str = "anonymous"
    edited_steps: Optional[list[str]] = None


class MetricsResponse(BaseModel):
    queries_served: int
    suggestions_generated: int
    feedback_events: int
    verdicts: dict[str, int]
    acceptance_rate: float


class JiraIssue(BaseModel):
    key: str
    title: str = ""
    description: str = ""


class JiraWebhook(BaseModel):
    issue: JiraIssue


class GithubWebhook(BaseModel):
    repo: str
    number: int
    title: str = ""
    body: str = ""


class WebhookResponse(BaseModel):
    comment: str
    suggestion_id: str


class HealthResponse(BaseModel):
    status: str
