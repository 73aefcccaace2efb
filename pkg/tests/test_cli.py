import json

import numpy as np
import pytest

from casebook.cli import main
from casebook.snapshot import load_snapshot

from conftest import github_jsonl, jira_jsonl, synthetic_corpus


@pytest.fixture(scope="module")
def exports(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("cli")
    tickets, prs = synthetic_corpus(12, seed=2)
    (tmp / "jira.jsonl").write_text(jira_jsonl(tickets))
    (tmp / "github.jsonl").write_text(github_jsonl(prs))
    return tmp, tickets, prs


def ingest(tmp, out="snap", extra=()):
    return main(
        [
            "ingest",
            "--jira",
            str(tmp / "jira.jsonl"),
            "--github",
            str(tmp / "github.jsonl"),
            "--out",
            str(tmp / out),
            "--dimension",
            "48",
            "--seed",
            "2",
            *extra,
        ]
    )


class TestIngest:
    def test_counts_printed(self, exports, capsys):
        tmp, tickets, prs = exports
        assert ingest(tmp) == 0
        out = capsys.readouterr().out
        assert f"tickets: {len(tickets)}" in out
        assert f"pull_requests: {len(prs)}" in out
        assert "links:" in out

    def test_snapshot_loadable(self, exports):
        tmp, tickets, _ = exports
        ingest(tmp)
        snap = load_snapshot(tmp / "snap")
        assert snap.counts["tickets"] == len(tickets)
        assert set(snap.indexes).issubset({"ticket", "comment", "pr"})

    def test_missing_file_is_data_error(self, exports):
        tmp, _, _ = exports
        rc = main(
            ["ingest", "--jira", str(tmp / "nope.jsonl"), "--github", str(tmp / "github.jsonl"), "--out", str(tmp / "x")]
        )
        assert rc == 2

    def test_dangling_keys_warned_on_stderr(self, exports, tmp_path, capsys):
        tmp, tickets, _ = exports
        (tmp_path / "jira.jsonl").write_text(jira_jsonl(tickets[:1]))
        (tmp_path / "github.jsonl").write_text(
            json.dumps(
                {
                    "repo": "acme/web",
                    "number": 1,
                    "title": "x",
                    "body": "Fixes GHOST-42",
                    "commit_messages": [],
                    "diff": "",
                    "review_comments": [],
                    "state": "open",
                    "merged_at": None,
                }
            )
            + "\n"
        )
        rc = main(
            [
                "ingest",
                "--jira",
                str(tmp_path / "jira.jsonl"),
                "--github",
                str(tmp_path / "github.jsonl"),
                "--out",
                str(tmp_path / "snap"),
                "--dimension",
                "48",
            ]
        )
        assert rc == 0
        err = capsys.readouterr().err
        warning = json.loads(err.strip().splitlines()[0])
        assert warning == {"kind": "dangling_key", "key": "GHOST-42", "pr": "acme/web#1"}


class TestQuerySuggest:
    def test_query_prints_bundle(self, exports, capsys):
        tmp, tickets, _ = exports
        ingest(tmp)
        capsys.readouterr()
        rc = main(["query", "--snapshot", str(tmp / "snap"), "--text", tickets[0].title, "--k", "3"])
        assert rc == 0
        body = json.loads(capsys.readouterr().out)
        assert len(body["hits"]) <= 3

    def test_query_empty_snapshot_exit_2(self, tmp_path, capsys):
        rc = main(["query", "--snapshot", str(tmp_path / "missing"), "--text", "x"])
        assert rc == 2

    def test_suggest_prints_suggestion(self, exports, capsys):
        tmp, tickets, _ = exports
        ingest(tmp)
        capsys.readouterr()
        rc = main(["suggest", "--snapshot", str(tmp / "snap"), "--text", tickets[1].title])
        assert rc == 0
        body = json.loads(capsys.readouterr().out)
        assert body["steps"]
        assert body["generator"] == "extractive"

    def test_suggest_remote_unconfigured_is_data_error(self, exports, capsys):
        tmp, tickets, _ = exports
        ingest(tmp)
        rc = main(
            [
                "suggest",
                "--snapshot",
                str(tmp / "snap"),
                "--text",
                "x",
                "--generator",
                "remote",
            ]
        )
        assert rc == 2


class TestBuildIndexAndRefresh:
    def test_build_index_switches_kind(self, exports, capsys):
        tmp, _, _ = exports
        ingest(tmp, out="snap2")
        rc = main(["build-index", "--snapshot", str(tmp / "snap2"), "--kind", "hnsw"])
        assert rc == 0
        snap = load_snapshot(tmp / "snap2")
        assert snap.index_config.kind == "hnsw"

    def test_refresh_changes_vectors_and_version(self, exports, capsys):
        tmp, _, _ = exports
        ingest(tmp, out="snap3")
        before = load_snapshot(tmp / "snap3")
        before_vec = before.store.records()[0].vector.copy()
        rc = main(["refresh", "--snapshot", str(tmp / "snap3"), "--seed", "99"])
        assert rc == 0
        after = load_snapshot(tmp / "snap3")
        assert after.embedder.seed == 99
        assert after.store.model_version != before.store.model_version
        cid = before.store.records()[0].chunk_id
        assert not np.array_equal(after.store.get(cid).vector, before_vec)


class TestBenchEval:
    def test_bench_prints_table(self, capsys):
        rc = main(["bench", "--n", "1200", "--dim", "16", "--seed", "3", "--clusters", "4", "--queries", "20"])
        assert rc == 0
        out = capsys.readouterr().out
        assert "recall@10" in out
        assert "hnsw" in out and "ivf" in out and "flat" in out

    def test_eval_writes_report(self, exports, tmp_path, capsys):
        tmp, tickets, _ = exports
        ingest(tmp)
        judgments = tmp_path / "judgments.jsonl"
        lines = [
            json.dumps(
                {
                    "query_id": f"q{i}",
                    "text": t.title + " " + t.description,
                    "relevant": [f"ticket:{t.key}"],
                }
            )
            for i, t in enumerate(tickets[:5])
        ]
        judgments.write_text("\n".join(lines))
        report_path = tmp_path / "report.json"
        rc = main(
            [
                "eval",
                "--snapshot",
                str(tmp / "snap"),
                "--judgments",
                str(judgments),
                "--out",
                str(report_path),
            ]
        )
        assert rc == 0
        report = json.loads(report_path.read_text())
        assert report["recall_at"]["5"] >= 0.8  # self-retrieval should be easy
        assert report["mrr"] > 0.5
        assert len(report["per_query"]) == 5


class TestExitCodes:
    def test_usage_error_exit_1(self):
        with pytest.raises(SystemExit) as excinfo:
            main(["query", "--snapshot"])  # missing value
        assert excinfo.value.code == 1

    def test_unknown_command_exit_1(self):
        with pytest.raises(SystemExit) as excinfo:
            main(["frobnicate"])
        assert excinfo.value.code == 1

    def test_bad_judgments_exit_2(self, exports, tmp_path):
        tmp, _, _ = exports
        ingest(tmp)
        bad = tmp_path / "bad.jsonl"
        bad.write_text("not json\n")
        rc = main(["eval", "--snapshot", str(tmp / "snap"), "--judgments", str(bad)])
        assert rc == 2
