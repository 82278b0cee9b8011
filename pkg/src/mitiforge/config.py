"""Run configuration: defaults, file loading, and key=value overrides."""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path

from .errors import ConfigError


@dataclass
class RunConfig:
    # ingest / cache
    cache_dir: str = "cache"
    offline: bool = False
    fetch_parallelism: int = 4
    # retrieval
    embedder: str = "fallback"  # fallback | http
    embedder_url: str | None = None
    threshold_k: float = 0.5
    # classification / strategies
    rules_path: str | None = None
    catalog_path: str | None = None
    # chat backend
    llm_url: str | None = None
    llm_model: str | None = None
    mock_path: str | None = None
    # generation
    max_prompt_chars: int = 24_000
    thread_monitor_timeout: float = 10.0
    # harness
    harness: str = "fake"  # fake | command
    harness_script: str | None = None
    compile_cmd: str | None = None
    test_cmd: str | None = None
    test_report_glob: str = "**/TEST-*.xml"

    @classmethod
    def field_names(cls) -> set[str]:
        return {f.name for f in dataclasses.fields(cls)}

    @classmethod
    def from_file(cls, path: Path | str | None) -> "RunConfig":
        cfg = cls()
        if path is None:
            return cfg
        try:
            doc = json.loads(Path(path).read_text("utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(doc, dict):
            raise ConfigError("config document must be a JSON object")
        for key, value in doc.items():
            cfg._set(key, value)
        return cfg

    def apply_overrides(self, overrides: list[str]) -> None:
        for item in overrides:
            if "=" not in item:
                raise ConfigError(f"override must be key=value, got {item!r}")
            key, raw = item.split("=", 1)
            self._set(key.strip(), _coerce(raw.strip()))

    def _set(self, key: str, value) -> None:
        if key not in self.field_names():
            raise ConfigError(f"unknown config key: {key}")
        current = getattr(self, key)
        if isinstance(current, bool) and isinstance(value, str):
            value = value.lower() in ("1", "true", "yes", "on")
        elif isinstance(current, int) and not isinstance(current, bool) and isinstance(value, str):
            value = int(value)
        elif isinstance(current, float) and isinstance(value, str):
            value = float(value)
        setattr(self, key, value)

    def validate(self) -> None:
        if self.fetch_parallelism < 1:
            raise ConfigError("fetch_parallelism must be >= 1")
        if not 0.0 <= self.threshold_k <= 2.0:
            raise ConfigError("threshold_k must lie in [0, 2]")
        if self.embedder not in ("fallback", "http"):
            raise ConfigError(f"unknown embedder: {self.embedder}")
        if self.harness not in ("fake", "command"):
            raise ConfigError(f"unknown harness kind: {self.harness}")


def _coerce(raw: str):
    low = raw.lower()
    if low in ("true", "false"):
        return low == "true"
    if low in ("null", "none"):
        return None
    try:
        return int(raw)
    except ValueError:
        pass
    try:
        return float(raw)
    except ValueError:
        pass
    return raw
