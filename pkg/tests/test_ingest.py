import json
from datetime import datetime, timezone

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from casebook.errors import IngestError
from casebook.ingest import (
    ArtifactChunk,
    Comment,
    DiffSummary,
    PullRequest,
    Ticket,
    clean_text,
    dedupe_chunks,
    extract_issue_keys,
    link_tickets_prs,
    normalize_corpus,
    normalize_pr,
    normalize_ticket,
    parse_github_export,
    parse_jira_export,
    summarize_diff,
)

UTC = timezone.utc
T0 = datetime(2024, 1, 1, tzinfo=UTC)


def ticket_line(key="PROJ-1", **overrides):
    raw = {
        "key": key,
        "title": "UI crash on toggle",
        "description": "clicking the toggle crashes",
        "priority": "major",
        "status": "open",
        "resolution": None,
        "created_at": "2024-01-01T00:00:00Z",
        "updated_at": "2024-01-02T00:00:00Z",
        "comments": [],
    }
    raw.update(overrides)
    return json.dumps(raw)


def pr_line(repo="acme/web", number=42, **overrides):
    raw = {
        "repo": repo,
        "number": number,
        "title": "Fix: safeguard concurrent rendering",
        "body": "Fixes PROJ-1",
        "commit_messages": ["tidy up"],
        "diff": "",
        "review_comments": [],
        "state": "merged",
        "merged_at": "2024-02-01T00:00:00Z",
    }
    raw.update(overrides)
    return json.dumps(raw)


class TestParseJira:
    def test_single_record(self):
        tickets = parse_jira_export([ticket_line("PROJ-1")])
        assert len(tickets) == 1
        assert tickets[0].key == "PROJ-1"
        assert tickets[0].priority == "major"

    def test_empty_stream(self):
        assert parse_jira_export([]) == []

    def test_truncated_line_reports_line_number(self):
        lines = [ticket_line("PROJ-1"), ticket_line("PROJ-2"), '{"key": "PROJ-3", "tit']
        with pytest.raises(IngestError, match="line 3"):
            parse_jira_export(lines)

    def test_duplicate_key_named(self):
        with pytest.raises(IngestError, match="PROJ-1"):
            parse_jira_export([ticket_line("PROJ-1"), ticket_line("PROJ-1")])

    def test_missing_priority_defaults_unknown(self):
        raw = json.loads(ticket_line())
        del raw["priority"]
        tickets = parse_jira_export([json.dumps(raw)])
        assert tickets[0].priority == "unknown"

    def test_unknown_fields_ignored(self):
        raw = json.loads(ticket_line())
        raw["watchers"] = ["x"]
        assert parse_jira_export([json.dumps(raw)])[0].key == "PROJ-1"

    def test_created_after_updated_rejected(self):
        line = ticket_line(created_at="2024-03-01T00:00:00Z", updated_at="2024-01-01T00:00:00Z")
        with pytest.raises(IngestError, match="created_at"):
            parse_jira_export([line])

    def test_comment_stacktrace_detection(self):
        line = ticket_line(
            comments=[
                {"author": "a", "body": "at render() line 42", "created_at": "2024-01-01T01:00:00Z"},
                {"author": "b", "body": "just a note", "created_at": "2024-01-01T02:00:00Z"},
            ]
        )
        comments = parse_jira_export([line])[0].comments
        assert comments[0].contains_stacktrace is True
        assert comments[1].contains_stacktrace is False


class TestParseGithub:
    def test_single_record(self):
        prs = parse_github_export([pr_line()])
        assert len(prs) == 1
        assert prs[0].pr_id == "acme/web#42"

    def test_empty_stream(self):
        assert parse_github_export([]) == []

    def test_merged_requires_merged_at(self):
        with pytest.raises(IngestError, match="merged_at required"):
            parse_github_export([pr_line(merged_at=None)])

    def test_merged_at_forbidden_when_open(self):
        with pytest.raises(IngestError, match="merged_at"):
            parse_github_export([pr_line(state="open")])

    def test_duplicate_repo_number(self):
        with pytest.raises(IngestError, match="acme/web#42"):
            parse_github_export([pr_line(), pr_line()])


# Hand-labeled issue-key extraction set (50 strings). Each expectation was
# checked against the independent character-scanner below before freezing.
KEY_CASES = [
    ("Fixes PROJECT-123 in commit #ab12cd", ["PROJECT-123"]),
    ("", []),
    ("ABC-1, ABC-2, abc-3, XABC-1x", ["ABC-1", "ABC-2"]),
    ("no keys here", []),
    ("AB-1", ["AB-1"]),
    ("A-1", []),
    ("ABCDEFGHIJ-12345678", ["ABCDEFGHIJ-12345678"]),
    ("ABCDEFGHIJK-1", []),
    ("see ABC-123456789 overflow", []),
    ("WEB-42 and WEB-42 again", ["WEB-42"]),
    ("WEB-42 API-7", ["WEB-42", "API-7"]),
    ("API-7 WEB-42", ["API-7", "WEB-42"]),
    ("(CORE-9)", ["CORE-9"]),
    ("[UI-77]:", ["UI-77"]),
    ("fix/UI-77/branch", ["UI-77"]),
    ("ticket:ABC-1.", ["ABC-1"]),
    ("ABC-1x", []),
    ("xABC-1", []),
    ("9ABC-1", []),
    ("ABC-1-2", ["ABC-1"]),
    ("ABC--1", []),
    ("ABC-", []),
    ("-123", []),
    ("Abc-123", []),
    ("ABc-123", []),
    ("JIRA PROJ-123: fixed", ["PROJ-123"]),
    ("PROJ-123,PROJ-124", ["PROJ-123", "PROJ-124"]),
    ("merge PR-1 into PR-10", ["PR-1", "PR-10"]),
    ("v2 API-X", []),
    ("Fixes ABC-0012", ["ABC-0012"]),
    ("crash in ÅBC-12", ["BC-12"]),
    ("ABC-12345678", ["ABC-12345678"]),
    ("AB-12 CD-34 EF-56", ["AB-12", "CD-34", "EF-56"]),
    ('Revert "Fixes WEB-311"', ["WEB-311"]),
    ("WEB-311\nWEB-312", ["WEB-311", "WEB-312"]),
    ("tab\tTAB-9", ["TAB-9"]),
    ("ALL CAPS SENTENCE-5 HERE", ["SENTENCE-5"]),
    ("X-1 YZ-2", ["YZ-2"]),
    ("FOO-1bar", []),
    ("foo FOO-1 bar", ["FOO-1"]),
    ("FOO_2-1", []),
    ("UP-1, UP-1, UP-2, UP-1", ["UP-1", "UP-2"]),
    ("Fixes: ABC-1;DEF-2|GHI-3", ["ABC-1", "DEF-2", "GHI-3"]),
    ("0XY-5", []),
    ("XY-5.0", ["XY-5"]),
    ("release-ABC-9", ["ABC-9"]),
    ("ABC-9-suffix", ["ABC-9"]),
    ("AB-1CD-2", []),
    ("MIXEDabc ABC-77", ["ABC-77"]),
    ("ZZ-99999999 plus ZZ-999999999", ["ZZ-99999999"]),
]


def reference_extract(text: str) -> list[str]:
    """Independent character-scanner oracle for issue-key extraction."""

    def alnum(ch: str) -> bool:
        return "A" <= ch <= "Z" or "a" <= ch <= "z" or "0" <= ch <= "9"

    out: list[str] = []
    seen: set[str] = set()
    i, n = 0, len(text)
    while i < n:
        if "A" <= text[i] <= "Z" and (i == 0 or not alnum(text[i - 1])):
            j = i
            while j < n and "A" <= text[j] <= "Z":
                j += 1
            letters = j - i
            if 2 <= letters <= 10 and j < n and text[j] == "-":
                k = j + 1
                while k < n and "0" <= text[k] <= "9":
                    k += 1
                digits = k - j - 1
                if 1 <= digits <= 8 and (k == n or not alnum(text[k])):
                    key = text[i:k]
                    if key not in seen:
                        seen.add(key)
                        out.append(key)
                    i = k
                    continue
            i = j if j > i else i + 1
        else:
            i += 1
    return out


class TestExtractIssueKeys:
    def test_labeled_set_is_fifty_strings(self):
        assert len(KEY_CASES) == 50

    @pytest.mark.parametrize("text,expected", KEY_CASES)
    def test_labeled_set(self, text, expected):
        assert extract_issue_keys(text) == expected

    @pytest.mark.parametrize("text,expected", KEY_CASES)
    def test_agrees_with_reference_scanner(self, text, expected):
        assert reference_extract(text) == extract_issue_keys(text)


def make_ticket(key, **overrides):
    fields = dict(
        key=key,
        title="t",
        description="d",
        priority="major",
        status="open",
        resolution=None,
        created_at=T0,
        updated_at=T0,
        comments=(),
    )
    fields.update(overrides)
    return Ticket(**fields)


def make_pr(number=1, **overrides):
    fields = dict(
        repo="acme/web",
        number=number,
        title="",
        body="",
        commit_messages=(),
        diff_text="",
        review_comments=(),
        state="open",
        merged_at=None,
    )
    fields.update(overrides)
    return PullRequest(**fields)


class TestLinking:
    def test_body_link(self):
        tickets = [make_ticket("PROJECT-123")]
        prs = [make_pr(body="Fixes PROJECT-123")]
        edges = link_tickets_prs(tickets, prs)
        assert len(edges) == 1
        assert edges[0].source_field == "pr_body"
        assert edges[0].pr_id == "acme/web#1"

    def test_no_keys_no_edges(self):
        assert link_tickets_prs([make_ticket("AA-1")], [make_pr(body="nothing")]) == []

    def test_dangling_key_warns(self):
        warnings = []
        edges = link_tickets_prs(
            [make_ticket("AA-1")], [make_pr(body="Fixes GHOST-9")], diagnostics=warnings.append
        )
        assert edges == []
        assert warnings == [{"kind": "dangling_key", "key": "GHOST-9", "pr": "acme/web#1"}]

    def test_first_field_wins(self):
        tickets = [make_ticket("AA-1")]
        prs = [make_pr(title="AA-1 in title", body="also AA-1 in body")]
        edges = link_tickets_prs(tickets, prs)
        assert [e.source_field for e in edges] == ["pr_title"]

    def test_commit_message_source(self):
        edges = link_tickets_prs(
            [make_ticket("AA-1")], [make_pr(commit_messages=("fixes AA-1",))]
        )
        assert [e.source_field for e in edges] == ["commit_message"]

    def test_matches_bruteforce_join(self):
        tickets = [make_ticket(f"TK-{i}") for i in range(1, 8)]
        prs = [
            make_pr(1, body="Fixes TK-1 and TK-2"),
            make_pr(2, title="TK-3 work", commit_messages=("ref TK-4", "ref TK-9")),
            make_pr(3, body="unrelated"),
            make_pr(4, body="TK-1 again"),
        ]
        edges = link_tickets_prs(tickets, prs)
        known = {t.key for t in tickets}
        brute = set()
        for t in tickets:
            for pr in prs:
                joined = "\n".join([pr.title, pr.body, *pr.commit_messages])
                if t.key in extract_issue_keys(joined) and t.key in known:
                    brute.add((t.key, pr.repo, pr.number))
        assert {(e.ticket_key, e.pr_repo, e.pr_number) for e in edges} == brute


class TestNormalizeTicket:
    def test_boilerplate_header_removed_body_kept(self):
        t = make_ticket("AA-1", title="Crash", description="Steps to reproduce\nClick toggle")
        [chunk] = normalize_ticket(t)
        assert "click toggle" in chunk.text
        assert "steps to reproduce" not in chunk.text

    def test_stacktrace_lines_keep_casing(self):
        t = make_ticket(
            "AA-1",
            comments=(Comment("kim", "Broken again\nat render() line 42", T0),),
        )
        comment_chunk = [c for c in normalize_ticket(t) if c.partition == "comment"][0]
        assert "at render() line 42" in comment_chunk.text
        assert "broken again" in comment_chunk.text

    def test_error_marker_preserved_verbatim(self):
        t = make_ticket("AA-1", description="Error: NullPointer in Foo")
        [chunk] = normalize_ticket(t)
        assert "Error: NullPointer in Foo" in chunk.text

    def test_empty_description_no_comments_yields_title_chunk(self):
        t = make_ticket("AA-1", title="Crash", description="")
        chunks = normalize_ticket(t)
        assert len(chunks) == 1
        assert chunks[0].chunk_id == "ticket:AA-1"
        assert chunks[0].text == "crash"

    def test_chunk_ids_and_partitions(self):
        t = make_ticket("AA-1", comments=(Comment("a", "note one", T0), Comment("b", "", T0)))
        chunks = normalize_ticket(t)
        assert [c.chunk_id for c in chunks] == ["ticket:AA-1", "comment:AA-1:0"]
        assert {c.partition for c in chunks} == {"ticket", "comment"}

    @given(st.text(alphabet="abcXYZ(): \nErort", max_size=200))
    @settings(max_examples=200)
    def test_clean_text_idempotent(self, text):
        once = clean_text(text)
        assert clean_text(once) == once

    def test_no_empty_chunks(self):
        t = make_ticket("AA-1", title="", description="", comments=(Comment("a", " ", T0),))
        assert normalize_ticket(t) == []


DIFF = """\
diff --git a/b.js b/b.js
--- a/b.js
+++ b/b.js
@@ -1,4 +1,6 @@ function render()
+function safeguard() {
+  lock();
 }
@@ -10,2 +12,3 @@
-const x = 1;
+const x = 2;
diff --git a/a.js b/a.js
--- a/a.js
+++ b/a.js
@@ -5,1 +5,1 @@ function setup()
-  init(false);
+  init(true);
"""


class TestSummarizeDiff:
    def test_empty(self):
        assert summarize_diff("") == DiffSummary((), (), 0)

    def test_non_diff_text(self):
        assert summarize_diff("hello\nworld") == DiffSummary((), (), 0)

    def test_hunk_header_context(self):
        summary = summarize_diff(DIFF)
        assert "function render()" in summary.changed_functions
        assert "function setup()" in summary.changed_functions

    def test_declaration_lines_detected(self):
        summary = summarize_diff(DIFF)
        assert "function safeguard() {" in summary.changed_functions

    def test_files_and_hunks_counted_by_hand(self):
        summary = summarize_diff(DIFF)
        assert summary.files_touched == ("a.js", "b.js")
        assert summary.hunk_count == 3


class TestNormalizePr:
    def test_title_in_chunk(self):
        pr = make_pr(42, title="Fix: safeguard concurrent rendering")
        chunk = normalize_pr(pr, summarize_diff(""))
        assert "safeguard concurrent rendering" in chunk.text

    def test_empty_body_still_nonempty(self):
        pr = make_pr(42, title="Fix it")
        chunk = normalize_pr(pr, summarize_diff(""))
        assert chunk.text

    def test_chunk_id_scheme(self):
        pr = make_pr(42, title="x")
        chunk = normalize_pr(pr, summarize_diff(""))
        assert chunk.chunk_id == "pr:acme/web#42"
        assert chunk.source_key == "acme/web#42"

    def test_merged_at_timestamp(self):
        merged = datetime(2024, 5, 1, tzinfo=UTC)
        pr = make_pr(42, title="x", state="merged", merged_at=merged)
        assert normalize_pr(pr, summarize_diff("")).timestamp == merged


class TestCorpus:
    def test_dedupe_keeps_earliest(self):
        early = datetime(2024, 1, 1, tzinfo=UTC)
        late = datetime(2024, 6, 1, tzinfo=UTC)
        a = ArtifactChunk("ticket:A-1", "ticket", "same text", late, "A-1")
        b = ArtifactChunk("ticket:B-1", "ticket", "same text", early, "B-1")
        kept = dedupe_chunks([a, b])
        assert [c.chunk_id for c in kept] == ["ticket:B-1"]

    def test_dedupe_is_per_partition(self):
        a = ArtifactChunk("ticket:A-1", "ticket", "same", T0, "A-1")
        b = ArtifactChunk("pr:r#1", "pr", "same", T0, "r#1")
        assert len(dedupe_chunks([a, b])) == 2

    def test_round_trip_source_keys(self):
        tickets = [
            make_ticket("AA-1", title="one", comments=(Comment("a", "hello body", T0),)),
            make_ticket("AA-2", title="two"),
        ]
        prs = [make_pr(7, title="Fix AA-1 crash")]
        chunks = normalize_corpus(tickets, prs)
        ticket_keys = {t.key for t in tickets}
        pr_ids = {p.pr_id for p in prs}
        for chunk in chunks:
            assert chunk.text
            assert chunk.partition in {"ticket", "comment", "pr"}
            if chunk.partition == "pr":
                assert chunk.source_key in pr_ids
            else:
                assert chunk.source_key in ticket_keys
