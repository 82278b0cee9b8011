"""Bounded patch adaptation: compile-check rounds, functionality-test rounds,
and the end-to-end mitigation pipeline."""
from __future__ import annotations

import dataclasses
import glob
import hashlib
import json
import shlex
import subprocess
import time
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field, replace
from pathlib import Path

from . import classify, db, strategies
from .astlib import (
    ImpactedFunction,
    build_slice,
    collect_param_context,
    collect_return_context,
    find_call_sites,
    parse_function,
)
from .classify import VulnerabilityType
from .config import RunConfig
from .errors import HarnessError, PipelineError, UnclassifiedType
from .generate import (
    GenerationRequest,
    MitigationPatch,
    build_generation_prompt,
    generate_mitigation,
    parse_patch,
)
from .ingest import VulnRecord, fetch_reference, html_to_text

MAX_SYNTAX_ROUNDS = 5
MAX_FUNCTIONALITY_ROUNDS = 5


@dataclass
class TestReport:
    total: int
    failed: list[tuple[str, str]] = field(default_factory=list)

    @property
    def failed_ids(self) -> set[str]:
        return {test_id for test_id, _ in self.failed}

    def to_dict(self) -> dict:
        return {"total": self.total, "failed": [list(f) for f in self.failed]}

    @classmethod
    def from_dict(cls, d: dict) -> "TestReport":
        return cls(total=d["total"], failed=[tuple(f) for f in d.get("failed", [])])


@dataclass
class Workspace:
    """One source file receiving whole-function replacement patches."""

    root: Path
    file_rel: str
    original_function_text: str
    _original_content: str = ""

    def __post_init__(self) -> None:
        self.root = Path(self.root)
        content = self.file_path.read_text("utf-8")
        if self.original_function_text not in content:
            raise HarnessError(
                f"function text not found in {self.file_rel}; cannot apply patches"
            )
        self._original_content = content

    @property
    def file_path(self) -> Path:
        return self.root / self.file_rel

    def apply(self, function_text: str) -> None:
        patched = self._original_content.replace(self.original_function_text, function_text, 1)
        self.file_path.write_text(patched, "utf-8")

    def restore(self) -> None:
        self.file_path.write_text(self._original_content, "utf-8")


class CommandHarness:
    """Runs real compile/test commands; {workspace} in the templates is filled in."""

    def __init__(self, compile_cmd: str, test_cmd: str, test_report_glob: str,
                 timeout: float = 600.0) -> None:
        if "{workspace}" not in compile_cmd or "{workspace}" not in test_cmd:
            raise HarnessError("command templates must contain a {workspace} slot")
        self.compile_cmd = compile_cmd
        self.test_cmd = test_cmd
        self.test_report_glob = test_report_glob
        self.timeout = timeout
        self.compile_calls = 0
        self.test_calls = 0

    def _run(self, template: str, workspace: Path) -> subprocess.CompletedProcess:
        cmd = [part.format(workspace=str(workspace)) for part in shlex.split(template)]
        try:
            return subprocess.run(
                cmd, capture_output=True, text=True, timeout=self.timeout
            )
        except (OSError, subprocess.TimeoutExpired) as exc:
            raise HarnessError(f"command failed to run: {exc}") from exc

    def compile(self, workspace: Path) -> tuple[bool, str]:
        self.compile_calls += 1
        proc = self._run(self.compile_cmd, workspace)
        return proc.returncode == 0, (proc.stdout + proc.stderr)

    def run_tests(self, workspace: Path) -> TestReport:
        self.test_calls += 1
        self._run(self.test_cmd, workspace)
        return parse_junit_reports(workspace, self.test_report_glob)


def parse_junit_reports(workspace: Path, pattern: str) -> TestReport:
    total = 0
    failed: list[tuple[str, str]] = []
    for path in sorted(glob.glob(str(Path(workspace) / pattern), recursive=True)):
        try:
            tree = ET.parse(path)
        except ET.ParseError as exc:
            raise HarnessError(f"malformed test report {path}: {exc}") from exc
        root = tree.getroot()
        suites = [root] if root.tag == "testsuite" else root.findall(".//testsuite")
        for suite in suites:
            for case in suite.findall("testcase"):
                total += 1
                name = case.get("name", "")
                classname = case.get("classname", "")
                test_id = f"{classname}.{name}" if classname else name
                for failure in list(case.findall("failure")) + list(case.findall("error")):
                    failed.append((test_id, failure.get("message", "") or (failure.text or "")))
                    break
    return TestReport(total=total, failed=failed)


class FakeHarness:
    """Scripted process substitute; sequences repeat their last element."""

    def __init__(
        self,
        compile_results: list[tuple[bool, str]] | None = None,
        test_reports: list[TestReport] | None = None,
    ) -> None:
        self.compile_results = compile_results or [(True, "")]
        self.test_reports = test_reports or [TestReport(total=0)]
        self.compile_calls = 0
        self.test_calls = 0

    @classmethod
    def from_file(cls, path: Path | str) -> "FakeHarness":
        doc = json.loads(Path(path).read_text("utf-8"))
        return cls(
            compile_results=[tuple(r) for r in doc.get("compile_results", [[True, ""]])],
            test_reports=[TestReport.from_dict(r) for r in doc.get("test_reports", [])]
            or [TestReport(total=0)],
        )

    def compile(self, workspace: Path) -> tuple[bool, str]:
        result = self.compile_results[min(self.compile_calls, len(self.compile_results) - 1)]
        self.compile_calls += 1
        return bool(result[0]), str(result[1])

    def run_tests(self, workspace: Path) -> TestReport:
        report = self.test_reports[min(self.test_calls, len(self.test_reports) - 1)]
        self.test_calls += 1
        return report


def build_syntax_adapt_prompt(error_log: str, function_text: str) -> str:
    return (
        f"The following code contains a syntax error {error_log}, please fix it. "
        f"{function_text}"
    )


def build_functionality_adapt_prompt(
    generation_prompt: str, test_id: str, message: str
) -> str:
    failed_test = f"{test_id}: {message}" if message else test_id
    return (
        generation_prompt
        + f"\nThe mitigated function should avoid influencing test: {failed_test}\n"
    )


def adapt_syntax(
    patch: MitigationPatch, workspace: Workspace, harness, llm
) -> MitigationPatch:
    """Compile loop: at most five rounds; workspace restored on exhaustion."""
    if patch.status != "Candidate":
        raise ValueError(f"adapt_syntax expects a Candidate patch, got {patch.status}")
    current = patch
    for round_no in range(1, MAX_SYNTAX_ROUNDS + 1):
        workspace.apply(current.function_text)
        ok, log = harness.compile(workspace.root)
        if ok:
            return replace(current, status="SyntaxOk", syntax_rounds=round_no)
        if round_no == MAX_SYNTAX_ROUNDS:
            break
        prompt = build_syntax_adapt_prompt(log, current.function_text)
        reply = llm.complete(prompt)
        new_text = parse_patch(reply)
        current = replace(
            current,
            function_text=new_text,
            history=current.history + [current.function_text],
        )
    workspace.restore()
    return replace(current, syntax_rounds=MAX_SYNTAX_ROUNDS).failed("SyntaxExhausted")


def adapt_functionality(
    patch: MitigationPatch,
    workspace: Workspace,
    harness,
    baseline: TestReport,
    llm,
    generation_prompt: str,
) -> MitigationPatch:
    """Test loop: regressions are failures not present in the baseline report.

    Each regenerated candidate passes through adapt_syntax with a fresh budget.
    """
    if patch.status != "SyntaxOk":
        raise ValueError(f"adapt_functionality expects a SyntaxOk patch, got {patch.status}")
    current = patch
    for round_no in range(1, MAX_FUNCTIONALITY_ROUNDS + 1):
        workspace.apply(current.function_text)
        report = harness.run_tests(workspace.root)
        new_failures = [f for f in report.failed if f[0] not in baseline.failed_ids]
        if not new_failures:
            return replace(current, status="Validated", functionality_rounds=round_no)
        if round_no == MAX_FUNCTIONALITY_ROUNDS:
            break
        test_id, message = new_failures[0]
        prompt = build_functionality_adapt_prompt(generation_prompt, test_id, message)
        reply = llm.complete(prompt)
        candidate = MitigationPatch(
            function_text=parse_patch(reply),
            strategy_used=current.strategy_used,
            functionality_rounds=round_no,
            history=current.history + [current.function_text],
        )
        adapted = adapt_syntax(candidate, workspace, harness, llm)
        if adapted.status != "SyntaxOk":
            return replace(adapted, functionality_rounds=round_no)
        current = adapted
    workspace.restore()
    return replace(current, functionality_rounds=MAX_FUNCTIONALITY_ROUNDS).failed(
        "FunctionalityExhausted"
    )


@dataclass
class StageRecord:
    stage: str
    input_digest: str
    decision: str
    duration_ms: float

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


class RunRecorder:
    def __init__(self) -> None:
        self.records: list[StageRecord] = []

    def add(self, stage: str, payload: str, decision: str, started: float) -> None:
        digest = hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]
        self.records.append(
            StageRecord(stage, digest, decision, round((time.monotonic() - started) * 1000, 3))
        )

    def to_jsonl(self) -> str:
        return "".join(json.dumps(r.to_dict()) + "\n" for r in self.records)


@dataclass
class PipelineResult:
    patch: MitigationPatch
    decision: db.Decision
    distance: float | None
    vtype: VulnerabilityType | None
    run_record: list[StageRecord]
    baseline: TestReport | None = None
    final_report: TestReport | None = None


def _stage(recorder: RunRecorder, name: str):
    class _Ctx:
        def __enter__(self):
            self.started = time.monotonic()
            return self

        def done(self, payload: str, decision: str) -> None:
            recorder.add(name, payload, decision, self.started)

        def __exit__(self, exc_type, exc, tb):
            if exc is not None and not isinstance(exc, PipelineError):
                raise PipelineError(name, exc) from exc
            return False

    return _Ctx()


def run_pipeline(
    record: VulnRecord,
    impacted: ImpactedFunction,
    index: db.MitigationIndex,
    cfg: RunConfig,
    llm,
    harness,
    workspace: Workspace,
) -> PipelineResult:
    """Retrieval decision, strategy assembly, slicing, generation, adaptation."""
    recorder = RunRecorder()

    with _stage(recorder, "embed") as st:
        embedder = (
            db.HttpEmbedder(cfg.embedder_url)
            if cfg.embedder == "http"
            else db.FallbackEmbedder()
        )
        query = db.embed_description(record.description, embedder)
        st.done(record.description, f"dim={query.dim}")

    with _stage(recorder, "retrieve") as st:
        retrieval = db.query_nearest(
            index, query, db.RetrievalConfig(threshold_k=cfg.threshold_k)
        )
        distance = retrieval.best[1] if retrieval.best else None
        st.done(record.cve_id, retrieval.decision.value)

    vtype: VulnerabilityType | None = None
    if retrieval.decision is db.Decision.RESEMBLING:
        with _stage(recorder, "version_retrieval") as st:
            prompt = strategies.build_version_retrieval_prompt(
                retrieval.best[0], record, impacted.dependency
            )
            strategy_block = llm.complete(prompt)
            strategy_name = "Resembling"
            st.done(prompt, retrieval.best[0].cve_id)
    else:
        with _stage(recorder, "classify") as st:
            table = classify.RuleTable.load(cfg.rules_path) if cfg.rules_path else None
            vtype = classify.classify_type(record, llm, fallback=True, table=table)
            st.done(record.cve_id, vtype.value)
        if vtype is VulnerabilityType.UNCLASSIFIED:
            patch = MitigationPatch(function_text="", strategy_used="").failed("Unclassifiable")
            return PipelineResult(
                patch=patch, decision=retrieval.decision, distance=distance,
                vtype=vtype, run_record=recorder.records,
            )
        with _stage(recorder, "extract_info") as st:
            exploit_text = classify.exploit_reference_text(
                record,
                fetch=lambda ref: fetch_reference(ref, cfg.cache_dir, offline=cfg.offline),
                to_text=html_to_text,
            )
            info = classify.extract_mitigating_info(
                record, vtype, exploit_text, impacted.source_text, llm
            )
            st.done(record.cve_id, f"{info.kind.value}={info.value}")
        with _stage(recorder, "strategy") as st:
            catalog = (
                strategies.StrategyCatalog.load(cfg.catalog_path)
                if cfg.catalog_path
                else None
            )
            strategy = strategies.select_type_strategy(vtype, catalog)
            strategy_block = strategies.render_strategy(strategy, info)
            strategy_name = strategy.name
            st.done(vtype.value, strategy_name)

    with _stage(recorder, "slice") as st:
        ast = parse_function(impacted.source_text)
        sites = find_call_sites(ast, impacted.vulnerable_api, strict=True)
        param_ctx = collect_param_context(ast, sites)
        ret_ctx = collect_return_context(ast, sites)
        context_slice = build_slice(ast, param_ctx, ret_ctx, sites)
        st.done(impacted.source_text, f"lines={len(context_slice.lines)}")

    generation_prompt = ""
    with _stage(recorder, "generate") as st:
        request = GenerationRequest(
            record=record,
            vtype=vtype or VulnerabilityType.UNCLASSIFIED,
            strategy_block=strategy_block,
            slice=context_slice,
            impacted=impacted,
            few_shots=strategies.load_few_shots(),
            max_prompt_chars=cfg.max_prompt_chars,
        )
        generation_prompt = build_generation_prompt(request)
        patch = generate_mitigation(request, llm, strategy_name)
        st.done(generation_prompt, "Candidate")

    with _stage(recorder, "adapt_syntax") as st:
        baseline = harness.run_tests(workspace.root)
        patch = adapt_syntax(patch, workspace, harness, llm)
        st.done(patch.function_text, patch.status)

    final_report: TestReport | None = None
    if patch.status == "SyntaxOk":
        with _stage(recorder, "adapt_functionality") as st:
            patch = adapt_functionality(
                patch, workspace, harness, baseline, llm, generation_prompt
            )
            st.done(patch.function_text, patch.status)
        if patch.status == "Validated":
            final_report = harness.run_tests(workspace.root)

    return PipelineResult(
        patch=patch,
        decision=retrieval.decision,
        distance=distance,
        vtype=vtype,
        run_record=recorder.records,
        baseline=baseline,
        final_report=final_report,
    )
