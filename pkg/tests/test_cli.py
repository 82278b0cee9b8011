"""Command-line surface: exit codes, outputs, and rendered artifacts."""
from __future__ import annotations

import json
from pathlib import Path

import pytest
from click.testing import CliRunner

from e2e_fixture import build_eval_fixture
from fixture_data import IMPACTED_SOURCE, MITIGATED_REPLY, historical_entry, log4shell_record
from mitiforge import cli, report
from mitiforge.db import build_index, save_index
from mitiforge.generate import prompt_digest
from mitiforge.ingest import cache_paths
from mitiforge.strategies import build_version_retrieval_prompt
from mitiforge.astlib import Dependency


@pytest.fixture
def runner():
    return CliRunner()


def _write_record(path: Path, record) -> Path:
    path.write_text(json.dumps(record.to_dict()), "utf-8")
    return path


class TestBuildDb:
    FEED_URL = "https://adv.example/log4j"

    def _feed_file(self, tmp_path: Path) -> Path:
        feed = {
            "vulnerabilities": [
                {
                    "cve": {
                        "id": "CVE-2021-44228",
                        "descriptions": [{"lang": "en", "value": "Remote code execution via lookups."}],
                        "references": [{"url": self.FEED_URL, "tags": ["Mitigation"]}],
                    }
                },
                {
                    "cve": {
                        "id": "CVE-2021-00001",
                        "descriptions": [{"lang": "en", "value": "No mitigation reference here."}],
                        "references": [],
                    }
                },
                {"cve": {"id": "CVE-2021-00002", "descriptions": []}},
            ]
        }
        path = tmp_path / "feed.json"
        path.write_text(json.dumps(feed), "utf-8")
        return path

    def test_build_counts_and_index(self, runner, tmp_path):
        feed = self._feed_file(tmp_path)
        cache_dir = tmp_path / "cache"
        cache_dir.mkdir()
        body_path, _ = cache_paths(cache_dir, self.FEED_URL)
        body_path.write_bytes(
            b"<h2>Mitigation</h2><p>Set formatMsgNoLookups to true.</p>"
        )
        out = tmp_path / "index.json"
        result = runner.invoke(cli.main, [
            "build-db", str(feed), "--out", str(out),
            "--set", "offline=true", "--set", f"cache_dir={cache_dir}",
        ])
        assert result.exit_code == 0, result.output
        assert "parsed=2 skipped=1 with_mitigation=1 indexed=1 warnings=0" in result.output
        from mitiforge.db import load_index

        index = load_index(out)
        assert [e.cve_id for e in index.entries] == ["CVE-2021-44228"]
        assert index.entries[0].workarounds[0].matched_keyword == "Mitigation"

    def test_offline_uncached_reference_is_warning(self, runner, tmp_path):
        feed = self._feed_file(tmp_path)
        out = tmp_path / "index.json"
        result = runner.invoke(cli.main, [
            "build-db", str(feed), "--out", str(out),
            "--set", "offline=true", "--set", f"cache_dir={tmp_path / 'empty'}",
        ])
        assert result.exit_code == 0, result.output
        assert "indexed=0 warnings=1" in result.output

    def test_malformed_feed_exit_code(self, runner, tmp_path):
        bad = tmp_path / "feed.json"
        bad.write_text("{not json", "utf-8")
        result = runner.invoke(cli.main, [
            "build-db", str(bad), "--out", str(tmp_path / "i.json"),
        ])
        assert result.exit_code == cli.EXIT_INGEST


class TestClassifyCommand:
    def test_rule_fallback_without_backend(self, runner, tmp_path):
        record_path = _write_record(tmp_path / "r.json", log4shell_record())
        result = runner.invoke(cli.main, ["classify", "--record", str(record_path)])
        assert result.exit_code == 0
        assert result.output.strip() == "MaliciousCodeExecution"

    def test_unknown_config_key_exit_code(self, runner, tmp_path):
        record_path = _write_record(tmp_path / "r.json", log4shell_record())
        result = runner.invoke(cli.main, [
            "classify", "--record", str(record_path), "--set", "bogus=1",
        ])
        assert result.exit_code == cli.EXIT_CONFIG


class TestExtractContextCommand:
    def test_prints_slice_json(self, runner, tmp_path):
        src = tmp_path / "Loader.java"
        src.write_text(IMPACTED_SOURCE, "utf-8")
        result = runner.invoke(cli.main, [
            "extract-context", "--function", str(src), "--api", "xstream.fromXML",
        ])
        assert result.exit_code == 0
        doc = json.loads(result.output)
        assert doc["lines"] == [1, 2, 4, 5, 6]
        assert doc["call_sites"] == [{"line": 4, "col": 26}]

    def test_no_call_site_exit_code(self, runner, tmp_path):
        src = tmp_path / "Loader.java"
        src.write_text(IMPACTED_SOURCE, "utf-8")
        result = runner.invoke(cli.main, [
            "extract-context", "--function", str(src), "--api", "missing.call",
        ])
        assert result.exit_code == cli.EXIT_PARSE

    def test_unparseable_function_exit_code(self, runner, tmp_path):
        src = tmp_path / "Broken.java"
        src.write_text("Object f() {\n    return\n", "utf-8")
        result = runner.invoke(cli.main, [
            "extract-context", "--function", str(src), "--api", "x.y",
        ])
        assert result.exit_code == cli.EXIT_PARSE


def _mitigate_fixture(tmp_path: Path) -> dict:
    record = log4shell_record()
    entry = historical_entry()
    record_path = _write_record(tmp_path / "record.json", record)
    function_path = tmp_path / "Loader.java"
    function_path.write_text(IMPACTED_SOURCE, "utf-8")
    index_path = tmp_path / "index.json"
    save_index(build_index([entry]), index_path)
    version_prompt = build_version_retrieval_prompt(
        entry, record, Dependency("com.thoughtworks.xstream", "xstream", "1.4.19")
    )
    mock_path = tmp_path / "mock.json"
    mock_path.write_text(json.dumps({
        prompt_digest(version_prompt): "Set the formatMsgNoLookups property to true.",
        "__default__": MITIGATED_REPLY,
    }), "utf-8")
    return {
        "record": record_path,
        "function": function_path,
        "index": index_path,
        "mock": mock_path,
    }


class TestMitigateCommand:
    ARGS = ["--api", "xstream.fromXML",
            "--dependency", "com.thoughtworks.xstream:xstream:1.4.19"]

    def test_end_to_end_success(self, runner, tmp_path):
        fx = _mitigate_fixture(tmp_path)
        out_dir = tmp_path / "out"
        result = runner.invoke(cli.main, [
            "mitigate",
            "--record", str(fx["record"]),
            "--function", str(fx["function"]),
            *self.ARGS,
            "--index", str(fx["index"]),
            "--out-dir", str(out_dir),
            "--set", f"mock_path={fx['mock']}",
            "--set", "offline=true",
        ])
        assert result.exit_code == 0, result.output
        assert "decision=Resembling" in result.output
        assert "status=Validated" in result.output
        mitigated = (out_dir / "Loader.java.mitigated").read_text("utf-8")
        assert mitigated.startswith("Object load(String path) {")
        assert "jndi" in mitigated
        records = [json.loads(l) for l in (out_dir / "run_record.jsonl").read_text().splitlines()]
        assert records[0]["stage"] == "embed"
        assert {"stage", "input_digest", "decision", "duration_ms"} <= set(records[0])

    def test_failed_patch_exit_one(self, runner, tmp_path):
        fx = _mitigate_fixture(tmp_path)
        harness_script = tmp_path / "harness.json"
        harness_script.write_text(json.dumps({"compile_results": [[False, "boom"]]}), "utf-8")
        result = runner.invoke(cli.main, [
            "mitigate",
            "--record", str(fx["record"]),
            "--function", str(fx["function"]),
            *self.ARGS,
            "--index", str(fx["index"]),
            "--out-dir", str(tmp_path / "out"),
            "--set", f"mock_path={fx['mock']}",
            "--set", f"harness_script={harness_script}",
            "--set", "offline=true",
        ])
        assert result.exit_code == cli.EXIT_FAILED
        assert "status=Failed" in result.output
        assert "reason=SyntaxExhausted" in result.output

    def test_missing_index_is_config_error(self, runner, tmp_path):
        fx = _mitigate_fixture(tmp_path)
        result = runner.invoke(cli.main, [
            "mitigate",
            "--record", str(fx["record"]),
            "--function", str(fx["function"]),
            *self.ARGS,
            "--index", str(tmp_path / "missing.json"),
        ])
        assert result.exit_code == cli.EXIT_CONFIG

    def test_command_harness_round_trip(self, runner, tmp_path):
        fx = _mitigate_fixture(tmp_path)
        result = runner.invoke(cli.main, [
            "mitigate",
            "--record", str(fx["record"]),
            "--function", str(fx["function"]),
            *self.ARGS,
            "--index", str(fx["index"]),
            "--out-dir", str(tmp_path / "out"),
            "--set", f"mock_path={fx['mock']}",
            "--set", "offline=true",
            "--set", "harness=command",
            "--set", "compile_cmd=true {workspace}",
            "--set", "test_cmd=true {workspace}",
        ])
        assert result.exit_code == 0, result.output
        assert "status=Validated" in result.output


class TestEvaluateCommand:
    def test_six_entry_manifest(self, runner, tmp_path):
        fx = build_eval_fixture(tmp_path / "fixture")
        out_dir = tmp_path / "eval-out"
        result = runner.invoke(cli.main, [
            "evaluate",
            "--manifest", str(fx["manifest"]),
            "--index", str(fx["index"]),
            "--out-dir", str(out_dir),
            "--set", f"mock_path={fx['mock']}",
            "--set", "offline=true",
        ])
        assert result.exit_code == 0, result.output
        rows = report.rows_from_csv((out_dir / "results.csv").read_text("utf-8"))
        assert len(rows) == 6
        assert all(r.mitigated for r in rows)
        assert all(r.functionality_safe for r in rows)
        strategies = {r.library: r.strategy for r in rows}
        assert strategies["xstream"] == "ExceptionCatching"
        assert strategies["snakeyaml"] == "ThreadMonitoring"
        assert strategies["log4j"] == "InputValidation"
        assert strategies["jackson"] == "ExceptionThrowing"
        assert strategies["commons-text"] == "Resembling"
        assert strategies["h2"] == "Resembling"
        table = (out_dir / "results.txt").read_text("utf-8")
        assert "Total" in table and "6/6" in table
        assert result.output.rstrip("\n").endswith(table.rstrip("\n").splitlines()[-1])
        png = (out_dir / "mitigations_by_library.png").read_bytes()
        assert png.startswith(b"\x89PNG\r\n")

    def test_broken_entry_does_not_abort_run(self, runner, tmp_path):
        fx = build_eval_fixture(tmp_path / "fixture")
        manifest = json.loads(fx["manifest"].read_text("utf-8"))
        manifest[0]["api"] = "missing.call"  # breaks the slice stage for entry 0
        fx["manifest"].write_text(json.dumps(manifest), "utf-8")
        out_dir = tmp_path / "eval-out"
        result = runner.invoke(cli.main, [
            "evaluate",
            "--manifest", str(fx["manifest"]),
            "--index", str(fx["index"]),
            "--out-dir", str(out_dir),
            "--set", f"mock_path={fx['mock']}",
            "--set", "offline=true",
        ])
        assert result.exit_code == 0, result.output
        rows = report.rows_from_csv((out_dir / "results.csv").read_text("utf-8"))
        assert len(rows) == 6
        assert not rows[0].mitigated and rows[0].reason
        assert sum(1 for r in rows if r.mitigated) == 5


class TestSweepCommand:
    def test_sweep_outputs(self, runner, tmp_path):
        fx = build_eval_fixture(tmp_path / "fixture")
        queries = tmp_path / "queries.json"
        texts = [json.loads((tmp_path / "fixture" / "records" / f"r{i}.json").read_text())["description"]
                 for i in range(6)]
        queries.write_text(json.dumps(texts), "utf-8")
        out_dir = tmp_path / "sweep-out"
        result = runner.invoke(cli.main, [
            "sweep-threshold",
            "--index", str(fx["index"]),
            "--queries", str(queries),
            "--out-dir", str(out_dir),
        ])
        assert result.exit_code == 0, result.output
        lines = [l for l in (out_dir / "sweep.csv").read_text().splitlines() if l]
        assert lines[0] == "threshold_k,resembling_count"
        assert len(lines) == 1 + 21  # default grid 0.0..2.0 step 0.1
        counts = [int(l.split(",")[1]) for l in lines[1:]]
        assert counts == sorted(counts)
        assert counts[1] == 2  # the two resembling descriptions sit at distance ~0
        assert counts[5] == 2  # the type-based descriptions stay beyond k = 0.5
        assert counts[-1] == 6
        assert (out_dir / "resembling_vs_threshold.png").read_bytes().startswith(b"\x89PNG")

    def test_explicit_ks(self, runner, tmp_path):
        fx = build_eval_fixture(tmp_path / "fixture")
        queries = tmp_path / "queries.json"
        queries.write_text(json.dumps(["stack overflow exception in parser"]), "utf-8")
        result = runner.invoke(cli.main, [
            "sweep-threshold",
            "--index", str(fx["index"]),
            "--queries", str(queries),
            "--ks", "0.5,1.0,2.0",
            "--out-dir", str(tmp_path / "s"),
        ])
        assert result.exit_code == 0, result.output
        assert [l.split("\t")[0] for l in result.output.strip().splitlines()] == [
            "0.50", "1.00", "2.00",
        ]


class TestReportHelpers:
    def test_csv_round_trip(self):
        rows = [
            report.EvalRow("lib", "CVE-1", "a.b", True, "Resembling", 1, 1, True),
            report.EvalRow("lib2", "CVE-2", "c.d", False, "", 5, 0, None, reason="SyntaxExhausted"),
        ]
        assert report.rows_from_csv(report.rows_to_csv(rows)) == rows

    def test_aggregate_and_table(self):
        rows = [
            report.EvalRow("lib", "CVE-1", "a.b", True, "Resembling", 1, 1, True),
            report.EvalRow("lib", "CVE-1", "a.c", False, "", 0, 0, None),
            report.EvalRow("zlib", "CVE-2", "x.y", True, "InputValidation", 1, 1, True),
        ]
        agg = report.aggregate_by_library(rows)
        assert agg[0] == ("lib", 1, "a.b/a.c", 1, 2)
        assert agg[1] == ("zlib", 1, "x.y", 1, 1)
        table = report.render_table(rows)
        assert "1/2" in table and "Total" in table and "2/3" in table
