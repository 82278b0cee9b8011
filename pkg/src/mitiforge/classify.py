"""Reproducing-behavior classification and per-type mitigating-information
extraction, with a deterministic rule fallback for hermetic operation."""
from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass
from enum import Enum
from importlib import resources
from pathlib import Path

from .errors import BackendUnavailable, MalformedReply, UnclassifiedType
from .ingest import RefTag, VulnRecord

log = logging.getLogger(__name__)


class VulnerabilityType(str, Enum):
    UNCAUGHT_EXCEPTION = "UncaughtException"
    RESOURCE_EXHAUSTION = "ResourceExhaustion"
    MALICIOUS_CODE_EXECUTION = "MaliciousCodeExecution"
    WRONG_RETURN_VALUE = "WrongReturnValue"
    UNCLASSIFIED = "Unclassified"

    @property
    def display(self) -> str:
        return _DISPLAY[self]


_DISPLAY = {
    VulnerabilityType.UNCAUGHT_EXCEPTION: "Uncaught Exception",
    VulnerabilityType.RESOURCE_EXHAUSTION: "Resource Exhaustion",
    VulnerabilityType.MALICIOUS_CODE_EXECUTION: "Malicious Code Execution",
    VulnerabilityType.WRONG_RETURN_VALUE: "Wrong Return Value",
    VulnerabilityType.UNCLASSIFIED: "Unclassified",
}


class InfoKind(str, Enum):
    UNCAUGHT_EXCEPTION_TYPE = "UncaughtExceptionType"
    EXHAUSTED_RESOURCE_TYPE = "ExhaustedResourceType"
    VULNERABLE_INPUT_FEATURE = "VulnerableInputFeature"
    HANDLEABLE_EXCEPTION_TYPE = "HandleableExceptionType"


class Provenance(str, Enum):
    DESCRIPTION = "Description"
    CWE_INFO = "CweInfo"
    EXPLOIT_REFERENCE = "ExploitReference"
    SOURCE_CODE = "SourceCode"


#: Which information each vulnerability type needs for its strategy.
INFO_KIND_FOR_TYPE = {
    VulnerabilityType.UNCAUGHT_EXCEPTION: InfoKind.UNCAUGHT_EXCEPTION_TYPE,
    VulnerabilityType.RESOURCE_EXHAUSTION: InfoKind.EXHAUSTED_RESOURCE_TYPE,
    VulnerabilityType.MALICIOUS_CODE_EXECUTION: InfoKind.VULNERABLE_INPUT_FEATURE,
    VulnerabilityType.WRONG_RETURN_VALUE: InfoKind.HANDLEABLE_EXCEPTION_TYPE,
}

_EXCEPTION_KINDS = {InfoKind.UNCAUGHT_EXCEPTION_TYPE, InfoKind.HANDLEABLE_EXCEPTION_TYPE}

_PROVENANCE_FOR_KIND = {
    InfoKind.UNCAUGHT_EXCEPTION_TYPE: Provenance.DESCRIPTION,
    InfoKind.EXHAUSTED_RESOURCE_TYPE: Provenance.DESCRIPTION,
    InfoKind.VULNERABLE_INPUT_FEATURE: Provenance.EXPLOIT_REFERENCE,
    InfoKind.HANDLEABLE_EXCEPTION_TYPE: Provenance.SOURCE_CODE,
}

_INFO_SLOT_NAME = {
    InfoKind.UNCAUGHT_EXCEPTION_TYPE: "[Uncaught Exception Type]",
    InfoKind.EXHAUSTED_RESOURCE_TYPE: "[Exhausted Resource Type]",
    InfoKind.VULNERABLE_INPUT_FEATURE: "[Vulnerable Input Feature]",
    InfoKind.HANDLEABLE_EXCEPTION_TYPE: "[Handleable Exception Type]",
}

_INFO_DESCRIPTION = {
    InfoKind.UNCAUGHT_EXCEPTION_TYPE: (
        "You should identify the detail of the exception from the description of the "
        "vulnerabilities. Your response should only contain one Exception/Error without "
        "any description, for example: 'java.lang.StackOverflowError'."
    ),
    InfoKind.EXHAUSTED_RESOURCE_TYPE: (
        "You should identify the detail of the exhausted resource type from the "
        "vulnerability description."
    ),
    InfoKind.VULNERABLE_INPUT_FEATURE: (
        "Please extract segments in the exploit for reproducing the vulnerability. "
        "Segments refer to some substrings in the input value, which is crucial for "
        "reproducing the vulnerability. For example, 'jndi' in 'jndi:rmi://192.168.174.1/Evil'."
    ),
    InfoKind.HANDLEABLE_EXCEPTION_TYPE: (
        "Please identify a handleable exception when execting Vulnerable Function. "
        "Your response should only contain one handleable exception in the code below "
        "without any description, for example: 'java.io.IOException'. {code}"
    ),
}


@dataclass(frozen=True)
class MitigatingInfo:
    kind: InfoKind
    value: str
    provenance: Provenance


@dataclass(frozen=True)
class BehaviorRule:
    pattern: str
    maps_to: VulnerabilityType


@dataclass
class RuleTable:
    priority: list[VulnerabilityType]
    rules: list[BehaviorRule]
    cwe_phrases: dict[str, str]

    @classmethod
    def load(cls, path: Path | str | None = None) -> "RuleTable":
        if path is None:
            raw = resources.files("mitiforge.data").joinpath("rules.json").read_text("utf-8")
        else:
            raw = Path(path).read_text("utf-8")
        doc = json.loads(raw)
        return cls(
            priority=[VulnerabilityType(t) for t in doc["priority"]],
            rules=[BehaviorRule(r["pattern"].lower(), VulnerabilityType(r["maps_to"])) for r in doc["rules"]],
            cwe_phrases=doc.get("cwe_phrases", {}),
        )


_default_rules: RuleTable | None = None


def default_rules() -> RuleTable:
    global _default_rules
    if _default_rules is None:
        _default_rules = RuleTable.load()
    return _default_rules


def render_cwe_info(cwes: list[tuple[str, str]]) -> str:
    if not cwes:
        return "(none)"
    return ", ".join(f"{cid}: {name}" if name else cid for cid, name in cwes)


def build_classification_prompt(record: VulnRecord) -> str:
    """Render the behavior-classification prompt; byte-stable for fixed inputs."""
    return (
        f"Below is the information of {record.cve_id}: "
        f"[CWE Info]: {render_cwe_info(record.cwes)}; "
        f"[Description]: {record.description}\n"
        "\n"
        "Please identify the vulnerability reproduction behavior using the CWE "
        "information and the description. (Selected from: Uncaught Exception, "
        "Resource Exhaustion, Malicious Code Execution, Wrong Return Value).\n"
    )


def rule_classify(
    description: str, cwes: list[tuple[str, str]] | None = None, table: RuleTable | None = None
) -> VulnerabilityType:
    """Pure phrase-matching fallback classifier.

    CWE ids contribute extra phrases through the rule table; types are tried in
    table priority order so multi-behavior descriptions resolve deterministically.
    """
    table = table or default_rules()
    haystack = description.lower()
    for cid, _name in cwes or []:
        phrase = table.cwe_phrases.get(cid)
        if phrase:
            haystack += " " + phrase.lower()
    for vtype in table.priority:
        for rule in table.rules:
            if rule.maps_to is vtype and rule.pattern in haystack:
                return vtype
    return VulnerabilityType.UNCLASSIFIED


def _find_type_name(reply: str) -> VulnerabilityType | None:
    """First case-insensitive occurrence of a type display name wins."""
    low = reply.lower()
    hits = []
    for vtype, display in _DISPLAY.items():
        if vtype is VulnerabilityType.UNCLASSIFIED:
            continue
        pos = low.find(display.lower())
        if pos >= 0:
            hits.append((pos, vtype))
    if not hits:
        return None
    return min(hits)[1]


def classify_type(record: VulnRecord, llm, fallback: bool = True,
                  table: RuleTable | None = None) -> VulnerabilityType:
    """Classify via the chat backend, falling back to rule_classify when enabled."""
    reply = None
    try:
        reply = llm.complete(build_classification_prompt(record))
    except BackendUnavailable:
        if not fallback:
            raise
    if reply is not None:
        vtype = _find_type_name(reply)
        if vtype is not None:
            return vtype
        log.warning("ambiguous classification reply for %s", record.cve_id)
    if fallback:
        return rule_classify(record.description, record.cwes, table)
    return VulnerabilityType.UNCLASSIFIED


def build_info_extraction_prompt(
    record: VulnRecord, vtype: VulnerabilityType, exploit_text: str, impacted_code: str = ""
) -> str:
    """Render the per-type mitigating-information extraction prompt."""
    if vtype is VulnerabilityType.UNCLASSIFIED:
        raise UnclassifiedType("cannot extract mitigating info for an unclassified vulnerability")
    kind = INFO_KIND_FOR_TYPE[vtype]
    description = _INFO_DESCRIPTION[kind]
    if kind is InfoKind.HANDLEABLE_EXCEPTION_TYPE:
        description = description.format(code=impacted_code)
    # An absent exploit reference is denoted by an empty list.
    reference = exploit_text if exploit_text.strip() else "[]"
    return (
        f"Below is the information of {record.cve_id}: {record.description}; "
        f"{render_cwe_info(record.cwes)}; [Reference]: {reference};\n"
        f"Reproducing the vulnerability causes {vtype.display}.\n"
        f"You should extract {_INFO_SLOT_NAME[kind]}: {description}\n"
    )


def _clean_reply(reply: str) -> str:
    return reply.strip().strip("`'\"").rstrip(".").strip()


def extract_mitigating_info(
    record: VulnRecord,
    vtype: VulnerabilityType,
    exploit_text: str,
    impacted_code: str,
    llm,
) -> MitigatingInfo:
    """Ask the backend for the strategy's required detail and validate the reply.

    Exception-kind replies must be a single fully-qualified name with no prose.
    """
    prompt = build_info_extraction_prompt(record, vtype, exploit_text, impacted_code)
    reply = llm.complete(prompt)
    kind = INFO_KIND_FOR_TYPE[vtype]
    value = _clean_reply(reply)
    if not value:
        raise MalformedReply("empty extraction reply")
    if kind in _EXCEPTION_KINDS and re.search(r"\s", value):
        raise MalformedReply(f"expected a single exception name, got: {value!r}")
    return MitigatingInfo(kind=kind, value=value, provenance=_PROVENANCE_FOR_KIND[kind])


def exploit_reference_text(record: VulnRecord, fetch, to_text) -> str:
    """Plain text of the first readable exploit-tagged reference, else empty."""
    for ref in record.references:
        if RefTag.EXPLOIT in ref.tags:
            try:
                return to_text(fetch(ref))
            except Exception:
                continue
    return ""
