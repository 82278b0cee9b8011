"""Type-based mitigation strategy catalog and the version-tailored
workaround-retrieval prompt."""
from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from .astlib import Dependency
from .classify import InfoKind, MitigatingInfo, VulnerabilityType
from .db import MitigationEntry
from .errors import InfoKindMismatch, UnclassifiedType
from .ingest import VulnRecord

INFO_PLACEHOLDER = "__INFO__"


@dataclass(frozen=True)
class MitigationStrategy:
    name: str  # ExceptionCatching, ThreadMonitoring, InputValidation, ExceptionThrowing, Resembling
    description: str
    snippet: str
    required_info_kind: InfoKind | None  # None for Resembling


@dataclass(frozen=True)
class VersionedWorkaround:
    cve_id: str
    dependency_version: str
    instruction: str
    sample_code: str | None = None


@dataclass
class StrategyCatalog:
    by_type: dict[VulnerabilityType, MitigationStrategy]

    @classmethod
    def load(cls, path: Path | str | None = None) -> "StrategyCatalog":
        if path is None:
            raw = resources.files("mitiforge.data").joinpath("catalog.json").read_text("utf-8")
        else:
            raw = Path(path).read_text("utf-8")
        doc = json.loads(raw)
        by_type = {}
        for item in doc["strategies"]:
            strategy = MitigationStrategy(
                name=item["name"],
                description=item["description"],
                snippet=item["snippet"],
                required_info_kind=InfoKind(item["required_info_kind"]),
            )
            by_type[VulnerabilityType(item["vulnerability_type"])] = strategy
        return cls(by_type=by_type)


_default_catalog: StrategyCatalog | None = None


def default_catalog() -> StrategyCatalog:
    global _default_catalog
    if _default_catalog is None:
        _default_catalog = StrategyCatalog.load()
    return _default_catalog


def load_few_shots(path: Path | str | None = None) -> list[tuple[str, str]]:
    """The two few-shot scenarios, Resembling first then Type-Based."""
    if path is None:
        raw = resources.files("mitiforge.data").joinpath("few_shots.json").read_text("utf-8")
    else:
        raw = Path(path).read_text("utf-8")
    doc = json.loads(raw)
    return [(s["label"], s["text"]) for s in doc["scenarios"]]


def select_type_strategy(
    vtype: VulnerabilityType, catalog: StrategyCatalog | None = None
) -> MitigationStrategy:
    if vtype is VulnerabilityType.UNCLASSIFIED:
        raise UnclassifiedType("no type-based strategy for an unclassified vulnerability")
    catalog = catalog or default_catalog()
    return catalog.by_type[vtype]


def render_strategy(strategy: MitigationStrategy, info: MitigatingInfo) -> str:
    """Strategy description plus its few-shot snippet with the info value filled in.

    The template hole must occur exactly once so the value appears verbatim once.
    """
    if strategy.required_info_kind is None or info.kind is not strategy.required_info_kind:
        raise InfoKindMismatch(
            f"strategy {strategy.name} requires {strategy.required_info_kind}, got {info.kind}"
        )
    template = strategy.description + "\n\n" + strategy.snippet
    if template.count(INFO_PLACEHOLDER) != 1:
        raise ValueError(f"strategy {strategy.name} template must contain exactly one hole")
    return template.replace(INFO_PLACEHOLDER, info.value)


def build_version_retrieval_prompt(
    historical: MitigationEntry, target: VulnRecord, dep: Dependency
) -> str:
    """Prompt asking for a workaround tailored to the dependency version in use."""
    if not historical.workarounds:
        raise ValueError("historical entry has no workaround sections")
    workaround_text = "\n\n".join(w.text for w in historical.workarounds)
    return (
        f"Below is the mitigation of {historical.cve_id}: {workaround_text}\n"
        "\n"
        f"Please identify a mitigation suitable for {target.cve_id} in "
        f"{dep.artifact}, {dep.version}.\n"
        f"[Description]: {target.description}\n"
    )
