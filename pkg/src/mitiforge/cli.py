"""Command-line surface: database build, classification, context extraction,
mitigation runs, and the fixture-scale evaluation harness."""
from __future__ import annotations

import json
import shutil
import sys
from pathlib import Path

import click

from . import adapt, classify, db, ingest, report
from .astlib import Dependency, VulnerableApi, load_impacted_function, slice_function
from .config import RunConfig
from .errors import (
    BackendUnavailable,
    ConfigError,
    DimensionMismatch,
    HarnessError,
    MalformedFeed,
    MalformedReply,
    MitiforgeError,
    NoCallSite,
    ParseError,
    PipelineError,
    PromptTooLong,
    UnclassifiedType,
    UnparseableReply,
    UnsupportedFormat,
)
from .generate import HttpChatBackend, ScriptedMockBackend

EXIT_OK = 0
EXIT_FAILED = 1  # pipeline completed but the patch did not validate
EXIT_CONFIG = 2
EXIT_INGEST = 3
EXIT_PARSE = 4
EXIT_CLASSIFY = 5
EXIT_RETRIEVAL = 6
EXIT_GENERATION = 7
EXIT_ADAPTATION = 8

_STAGE_EXIT_CODES = {
    "embed": EXIT_RETRIEVAL,
    "retrieve": EXIT_RETRIEVAL,
    "version_retrieval": EXIT_CLASSIFY,
    "classify": EXIT_CLASSIFY,
    "extract_info": EXIT_CLASSIFY,
    "strategy": EXIT_CLASSIFY,
    "slice": EXIT_PARSE,
    "generate": EXIT_GENERATION,
    "adapt_syntax": EXIT_ADAPTATION,
    "adapt_functionality": EXIT_ADAPTATION,
}

_ERROR_EXIT_CODES = [
    (ConfigError, EXIT_CONFIG),
    ((MalformedFeed, UnsupportedFormat), EXIT_INGEST),
    ((ParseError, NoCallSite), EXIT_PARSE),
    ((UnclassifiedType, MalformedReply, BackendUnavailable), EXIT_CLASSIFY),
    (DimensionMismatch, EXIT_RETRIEVAL),
    ((PromptTooLong, UnparseableReply), EXIT_GENERATION),
    (HarnessError, EXIT_ADAPTATION),
]


def _exit_code_for(exc: Exception) -> int:
    if isinstance(exc, PipelineError):
        return _STAGE_EXIT_CODES.get(exc.stage, EXIT_FAILED)
    for types, code in _ERROR_EXIT_CODES:
        if isinstance(exc, types):
            return code
    return EXIT_FAILED


def _load_config(config_path: str | None, overrides: tuple[str, ...]) -> RunConfig:
    cfg = RunConfig.from_file(config_path)
    cfg.apply_overrides(list(overrides))
    cfg.validate()
    return cfg


def _make_llm(cfg: RunConfig):
    if cfg.mock_path:
        return ScriptedMockBackend.from_file(cfg.mock_path)
    if cfg.llm_url:
        return HttpChatBackend(cfg.llm_url, cfg.llm_model or "default")
    # No backend configured: every call errors and rule fallbacks take over.
    return ScriptedMockBackend()


def _make_harness(cfg: RunConfig, script_override: str | None = None):
    if cfg.harness == "command":
        if not cfg.compile_cmd or not cfg.test_cmd:
            raise ConfigError("command harness requires compile_cmd and test_cmd")
        return adapt.CommandHarness(cfg.compile_cmd, cfg.test_cmd, cfg.test_report_glob)
    script = script_override or cfg.harness_script
    if script:
        return adapt.FakeHarness.from_file(script)
    return adapt.FakeHarness()


def _load_record(path: str) -> ingest.VulnRecord:
    return ingest.VulnRecord.from_dict(json.loads(Path(path).read_text("utf-8")))


config_option = click.option("--config", "config_path", type=click.Path(exists=True), default=None,
                             help="JSON config file.")
set_option = click.option("--set", "overrides", multiple=True, metavar="KEY=VALUE",
                          help="Override a config key.")


@click.group()
def main() -> None:
    """Mitigate upstream library vulnerabilities in downstream source code."""


@main.command("build-db")
@click.argument("feeds", nargs=-1, required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path(), help="Index file to write.")
@config_option
@set_option
def cmd_build_db(feeds: tuple[str, ...], out: str, config_path: str | None,
                 overrides: tuple[str, ...]) -> None:
    """Ingest CVE feeds and build the mitigation index."""
    try:
        cfg = _load_config(config_path, overrides)
        embedder = db.HttpEmbedder(cfg.embedder_url) if cfg.embedder == "http" else db.FallbackEmbedder()
        parsed = 0
        skipped = 0
        with_mitigation = 0
        warnings = 0
        entries = []
        for feed_path in feeds:
            feed = ingest.parse_cve_feed(Path(feed_path).read_bytes())
            parsed += len(feed.records)
            skipped += feed.skipped
            for record in feed.records:
                mitigation_refs = [
                    r for r in record.references if ingest.RefTag.MITIGATION in r.tags
                ]
                if not mitigation_refs:
                    continue
                with_mitigation += 1
                sections = []
                for ref in mitigation_refs:
                    try:
                        body = ingest.fetch_reference(ref, cfg.cache_dir, offline=cfg.offline)
                    except MitiforgeError:
                        warnings += 1
                        continue
                    text = ingest.html_to_text(body)
                    sections.extend(ingest.extract_workaround_sections(text, ref.url))
                if not sections:
                    continue
                entries.append(
                    db.MitigationEntry(
                        cve_id=record.cve_id,
                        description=record.description,
                        workarounds=sections,
                        embedding=db.embed_description(record.description, embedder),
                    )
                )
        index = db.build_index(entries)
        db.save_index(index, out)
        click.echo(
            f"parsed={parsed} skipped={skipped} with_mitigation={with_mitigation} "
            f"indexed={len(entries)} warnings={warnings}"
        )
    except MitiforgeError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(_exit_code_for(exc))


@main.command("classify")
@click.option("--record", "record_path", required=True, type=click.Path(exists=True))
@config_option
@set_option
def cmd_classify(record_path: str, config_path: str | None, overrides: tuple[str, ...]) -> None:
    """Classify a vulnerability's reproducing behavior."""
    try:
        cfg = _load_config(config_path, overrides)
        record = _load_record(record_path)
        table = classify.RuleTable.load(cfg.rules_path) if cfg.rules_path else None
        vtype = classify.classify_type(record, _make_llm(cfg), fallback=True, table=table)
        click.echo(vtype.value)
    except MitiforgeError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(_exit_code_for(exc))


@main.command("extract-context")
@click.option("--function", "function_path", required=True, type=click.Path(exists=True))
@click.option("--api", "api_spec", required=True, help='Vulnerable API, e.g. "xstream.fromXML".')
def cmd_extract_context(function_path: str, api_spec: str) -> None:
    """Print the line-aligned context slice around the vulnerable call as JSON."""
    try:
        source = Path(function_path).read_text("utf-8")
        context = slice_function(source, VulnerableApi.parse(api_spec), strict=True)
        click.echo(json.dumps(context.to_dict(), indent=2))
    except MitiforgeError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(_exit_code_for(exc))


def _run_one(
    record: ingest.VulnRecord,
    function_path: Path,
    api_spec: str,
    dependency_spec: str,
    index: db.MitigationIndex,
    cfg: RunConfig,
    llm,
    harness,
    work_dir: Path,
) -> adapt.PipelineResult:
    impacted = load_impacted_function(
        function_path, VulnerableApi.parse(api_spec), Dependency.parse(dependency_spec)
    )
    work_dir.mkdir(parents=True, exist_ok=True)
    target = work_dir / function_path.name
    shutil.copyfile(function_path, target)
    workspace = adapt.Workspace(
        root=work_dir, file_rel=function_path.name,
        original_function_text=impacted.source_text,
    )
    return adapt.run_pipeline(record, impacted, index, cfg, llm, harness, workspace)


@main.command("mitigate")
@click.option("--record", "record_path", required=True, type=click.Path(exists=True))
@click.option("--function", "function_path", required=True, type=click.Path(exists=True))
@click.option("--api", "api_spec", required=True)
@click.option("--dependency", "dependency_spec", required=True, metavar="GROUP:ARTIFACT:VERSION")
@click.option("--index", "index_path", required=True, type=click.Path())
@click.option("--out-dir", default=".", type=click.Path())
@config_option
@set_option
def cmd_mitigate(record_path: str, function_path: str, api_spec: str, dependency_spec: str,
                 index_path: str, out_dir: str, config_path: str | None,
                 overrides: tuple[str, ...]) -> None:
    """Run the full mitigation pipeline on one impacted function."""
    try:
        cfg = _load_config(config_path, overrides)
        if not Path(index_path).exists():
            raise ConfigError(f"index file not found: {index_path}")
        index = db.load_index(index_path)
        record = _load_record(record_path)
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        result = _run_one(
            record, Path(function_path), api_spec, dependency_spec, index,
            cfg, _make_llm(cfg), _make_harness(cfg), out / "workspace",
        )
    except (MitiforgeError, ValueError) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(_exit_code_for(exc) if isinstance(exc, Exception) else EXIT_FAILED)

    patch = result.patch
    (out / "run_record.jsonl").write_text(
        "".join(json.dumps(r.to_dict()) + "\n" for r in result.run_record), "utf-8"
    )
    if patch.function_text:
        (out / f"{Path(function_path).name}.mitigated").write_text(patch.function_text, "utf-8")
    distance = "n/a" if result.distance is None else f"{result.distance:.4f}"
    click.echo(
        f"decision={result.decision.value} distance={distance} "
        f"strategy={patch.strategy_used or 'n/a'} "
        f"rounds={patch.syntax_rounds}/{patch.functionality_rounds} status={patch.status}"
        + (f" reason={patch.failure_reason}" if patch.failure_reason else "")
    )
    if patch.status != "Validated":
        sys.exit(EXIT_FAILED)


@main.command("evaluate")
@click.option("--manifest", "manifest_path", required=True, type=click.Path(exists=True))
@click.option("--index", "index_path", default=None, type=click.Path(exists=True))
@click.option("--out-dir", default="eval-out", type=click.Path())
@config_option
@set_option
def cmd_evaluate(manifest_path: str, index_path: str | None, out_dir: str,
                 config_path: str | None, overrides: tuple[str, ...]) -> None:
    """Run the pipeline over a fixture manifest and emit the result table."""
    try:
        cfg = _load_config(config_path, overrides)
    except MitiforgeError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(_exit_code_for(exc))
    manifest_dir = Path(manifest_path).parent
    entries = json.loads(Path(manifest_path).read_text("utf-8"))
    index = db.load_index(index_path) if index_path else db.build_index([])
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    rows: list[report.EvalRow] = []
    for i, entry in enumerate(entries):
        record = _load_record(str(manifest_dir / entry["record"]))
        row = report.EvalRow(
            library=entry["library"],
            cve_id=record.cve_id,
            api=entry["api"],
            mitigated=False,
            strategy="",
            syntax_rounds=0,
            functionality_rounds=0,
            functionality_safe=None,
        )
        try:
            harness = _make_harness(cfg, script_override=_resolve(manifest_dir, entry.get("harness_script")))
            result = _run_one(
                record, manifest_dir / entry["function"], entry["api"],
                entry["dependency"], index, cfg, _make_llm(cfg), harness,
                out / f"work_{i}",
            )
            patch = result.patch
            row.strategy = patch.strategy_used
            row.syntax_rounds = patch.syntax_rounds
            row.functionality_rounds = patch.functionality_rounds
            exploit_id = entry["exploit_test_id"]
            if (
                patch.status == "Validated"
                and result.baseline is not None
                and result.final_report is not None
            ):
                row.mitigated = (
                    exploit_id in result.baseline.failed_ids
                    and exploit_id not in result.final_report.failed_ids
                )
                functionality_ids = set(entry.get("functionality_test_ids", []))
                new_failures = result.final_report.failed_ids - result.baseline.failed_ids
                row.functionality_safe = not (new_failures & functionality_ids)
            elif patch.failure_reason:
                row.reason = patch.failure_reason
        except (MitiforgeError, ValueError, OSError, KeyError) as exc:
            if isinstance(exc, PipelineError) and isinstance(exc.cause, UnclassifiedType):
                row.reason = "Unclassifiable"
            else:
                row.reason = str(exc)
        rows.append(row)

    table = report.render_table(rows)
    (out / "results.csv").write_text(report.rows_to_csv(rows), "utf-8")
    (out / "results.txt").write_text(table, "utf-8")
    report.plot_eval(rows, out / "mitigations_by_library.png")
    click.echo(table, nl=False)


def _resolve(base: Path, rel: str | None) -> str | None:
    return None if rel is None else str(base / rel)


@main.command("sweep-threshold")
@click.option("--index", "index_path", required=True, type=click.Path(exists=True))
@click.option("--queries", "queries_path", required=True, type=click.Path(exists=True),
              help="JSON array of description strings to embed and query.")
@click.option("--ks", default="", help="Comma-separated thresholds; default 0.0..2.0 step 0.1.")
@click.option("--out-dir", default="sweep-out", type=click.Path())
@config_option
@set_option
def cmd_sweep_threshold(index_path: str, queries_path: str, ks: str, out_dir: str,
                        config_path: str | None, overrides: tuple[str, ...]) -> None:
    """Count Resembling decisions across a range of match-score thresholds."""
    try:
        cfg = _load_config(config_path, overrides)
        index = db.load_index(index_path)
        embedder = db.HttpEmbedder(cfg.embedder_url) if cfg.embedder == "http" else db.FallbackEmbedder()
        texts = json.loads(Path(queries_path).read_text("utf-8"))
        queries = [db.embed_description(t, embedder) for t in texts]
        if ks:
            k_values = sorted(float(k) for k in ks.split(","))
        else:
            k_values = [round(0.1 * i, 1) for i in range(21)]
        table = db.sweep_threshold(index, queries, k_values)
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "sweep.csv").write_text(report.sweep_to_csv(table), "utf-8")
        report.plot_sweep(table, len(queries), out / "resembling_vs_threshold.png")
        for k, count in table:
            click.echo(f"{k:.2f}\t{count}")
    except MitiforgeError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(_exit_code_for(exc))


if __name__ == "__main__":
    main()
