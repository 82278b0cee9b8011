"""Chat backends, the mitigation-generation prompt, and patch reply parsing."""
from __future__ import annotations

import hashlib
import json
import os
import re
from dataclasses import dataclass, field, replace
from pathlib import Path

import requests

from .astlib import ContextSlice, ImpactedFunction, parse_function
from .classify import VulnerabilityType, render_cwe_info
from .errors import BackendUnavailable, ParseError, PromptTooLong, UnparseableReply
from .ingest import VulnRecord

DEFAULT_MAX_PROMPT_CHARS = 24_000

API_KEY_ENV = "MITIFORGE_LLM_KEY"


def prompt_digest(prompt: str) -> str:
    return hashlib.sha256(prompt.encode("utf-8")).hexdigest()


class ScriptedMockBackend:
    """Replays a recorded prompt-hash -> reply table.

    Unknown prompts raise unless a default reply is configured (used by loop
    tests where every round only needs some syntactically valid patch back).
    """

    def __init__(self, table: dict[str, str] | None = None, default_reply: str | None = None) -> None:
        self.table = dict(table or {})
        self.default_reply = default_reply
        self.calls: list[str] = []

    @classmethod
    def from_file(cls, path: Path | str) -> "ScriptedMockBackend":
        doc = json.loads(Path(path).read_text("utf-8"))
        default = doc.pop("__default__", None)
        return cls(table=doc, default_reply=default)

    @property
    def call_count(self) -> int:
        return len(self.calls)

    def record(self, prompt: str, reply: str) -> None:
        self.table[prompt_digest(prompt)] = reply

    def complete(self, prompt: str) -> str:
        self.calls.append(prompt)
        digest = prompt_digest(prompt)
        if digest in self.table:
            return self.table[digest]
        if self.default_reply is not None:
            return self.default_reply
        raise BackendUnavailable(f"no scripted reply for prompt hash {digest[:12]}")


class HttpChatBackend:
    """OpenAI-style chat-completions client."""

    def __init__(
        self,
        endpoint: str,
        model_name: str,
        timeout: float = 120.0,
        max_retries: int = 2,
        temperature: float = 0.0,
    ) -> None:
        self.endpoint = endpoint
        self.model_name = model_name
        self.timeout = timeout
        self.max_retries = max_retries
        self.temperature = temperature

    def complete(self, prompt: str) -> str:
        headers = {}
        key = os.environ.get(API_KEY_ENV)
        if key:
            headers["Authorization"] = f"Bearer {key}"
        payload = {
            "model": self.model_name,
            "temperature": self.temperature,
            "messages": [{"role": "user", "content": prompt}],
        }
        last_error: Exception | None = None
        for _ in range(self.max_retries + 1):
            try:
                resp = requests.post(
                    self.endpoint, json=payload, headers=headers, timeout=self.timeout
                )
                resp.raise_for_status()
                return resp.json()["choices"][0]["message"]["content"]
            except (requests.RequestException, KeyError, IndexError, ValueError) as exc:
                last_error = exc
        raise BackendUnavailable(f"chat backend failed: {last_error}")


@dataclass
class GenerationRequest:
    record: VulnRecord
    vtype: VulnerabilityType
    strategy_block: str
    slice: ContextSlice
    impacted: ImpactedFunction
    few_shots: list[tuple[str, str]]
    max_prompt_chars: int = DEFAULT_MAX_PROMPT_CHARS

    def __post_init__(self) -> None:
        labels = [label for label, _ in self.few_shots]
        if labels != ["Resembling Strategy", "Type-Based Strategy"]:
            raise ValueError("few_shots must be the Resembling then Type-Based scenarios")


@dataclass
class MitigationPatch:
    function_text: str
    strategy_used: str
    syntax_rounds: int = 0
    functionality_rounds: int = 0
    status: str = "Candidate"  # Candidate, SyntaxOk, Validated, Failed
    failure_reason: str | None = None
    history: list[str] = field(default_factory=list)

    def failed(self, reason: str) -> "MitigationPatch":
        return replace(self, status="Failed", failure_reason=reason)

    def to_dict(self) -> dict:
        return {
            "function_text": self.function_text,
            "strategy_used": self.strategy_used,
            "rounds": {"syntax": self.syntax_rounds, "functionality": self.functionality_rounds},
            "status": self.status,
            "failure_reason": self.failure_reason,
        }


def _render_function(impacted: ImpactedFunction, slice_: ContextSlice, slice_only: bool) -> str:
    """Function body with slice lines marked (or slice lines only)."""
    marked = set(slice_.lines)
    out = []
    for i, line in enumerate(impacted.source_text.splitlines(), start=1):
        if i in marked:
            out.append("> " + line)
        elif not slice_only:
            out.append("  " + line)
    return "\n".join(out)


def build_generation_prompt(req: GenerationRequest) -> str:
    """Assemble the full mitigation-generation prompt in fixed section order."""
    if not req.strategy_block.strip():
        raise ValueError("strategy_block must be non-empty")
    if not req.slice.lines:
        raise ValueError("context slice must be non-empty")
    for slice_only in (False, True):
        prompt = _render_prompt(req, slice_only)
        if len(prompt) <= req.max_prompt_chars:
            return prompt
    raise PromptTooLong(
        f"prompt exceeds {req.max_prompt_chars} characters even with slice-only rendering"
    )


def _render_prompt(req: GenerationRequest, slice_only: bool) -> str:
    record = req.record
    sections = [
        "## Task\n"
        "A third-party library used by the function below has a disclosed vulnerability. "
        "Modify the downstream function so the vulnerability can no longer be triggered, "
        "without changing the library itself.",
        "## Vulnerability\n"
        f"[CVE ID]: {record.cve_id}\n"
        f"[CWE Info]: {render_cwe_info(record.cwes)}\n"
        f"[Description]: {record.description}",
        "## Mitigation Strategy\n" + req.strategy_block.rstrip("\n"),
    ]
    for label, text in req.few_shots:
        sections.append(f"## Example: {label}\n" + text.rstrip("\n"))
    sections.append(
        "## Impacted Function\n"
        "(lines marked with '>' are the context relevant to the vulnerable call)\n"
        + _render_function(req.impacted, req.slice, slice_only)
    )
    sections.append(
        "## Instruction\n"
        "Generate only one potential mitigation: reply with one complete mitigated "
        "function in a fenced code block. Keep the function signature unchanged and "
        "avoid impacting the existing functionality."
    )
    return "\n\n".join(sections) + "\n"


_FENCE_RE = re.compile(r"```[a-zA-Z0-9_+-]*\n(.*?)```", re.DOTALL)


def parse_patch(reply: str) -> str:
    """Extract the first fenced code block holding a parseable method declaration.

    An unfenced reply that parses as a whole method is accepted as a fallback.
    """
    reply = reply.replace("\r\n", "\n")
    for match in _FENCE_RE.finditer(reply):
        candidate = match.group(1).strip("\n")
        if _parses(candidate):
            return candidate + "\n" if not candidate.endswith("\n") else candidate
    stripped = reply.strip("\n")
    if stripped and _parses(stripped):
        return stripped + "\n"
    raise UnparseableReply("reply contains no parseable method declaration")


def _parses(text: str) -> bool:
    try:
        parse_function(text)
        return True
    except ParseError:
        return False


def generate_mitigation(req: GenerationRequest, llm, strategy_name: str) -> MitigationPatch:
    """One backend call; the reply must contain a complete mitigated function."""
    prompt = build_generation_prompt(req)
    reply = llm.complete(prompt)
    function_text = parse_patch(reply)
    return MitigationPatch(function_text=function_text, strategy_used=strategy_name)
