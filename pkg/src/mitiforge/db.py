"""Mitigation database: description embeddings, exact cosine retrieval, and the
resembling-vs-type-based decision at the match-score threshold."""
from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np
import requests

from .errors import BackendUnavailable, DimensionMismatch, EmptyText
from .ingest import WorkaroundSection

FALLBACK_DIM = 512
NORM_TOLERANCE = 1e-6


@dataclass(frozen=True)
class EmbeddingVector:
    values: tuple[float, ...]

    @property
    def dim(self) -> int:
        return len(self.values)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.values, dtype=np.float64)

    @classmethod
    def from_array(cls, arr: np.ndarray) -> "EmbeddingVector":
        arr = np.asarray(arr, dtype=np.float64)
        if arr.ndim != 1 or arr.size == 0:
            raise DimensionMismatch("embedding must be a non-empty 1-d vector")
        if not np.all(np.isfinite(arr)):
            raise DimensionMismatch("embedding contains non-finite values")
        norm = float(np.linalg.norm(arr))
        if abs(norm - 1.0) > NORM_TOLERANCE:
            if norm == 0.0:
                raise DimensionMismatch("cannot normalize a zero vector")
            arr = arr / norm
        return cls(values=tuple(float(v) for v in arr))


class Decision(str, Enum):
    RESEMBLING = "Resembling"
    TYPE_BASED = "TypeBased"


@dataclass
class MitigationEntry:
    cve_id: str
    description: str
    workarounds: list[WorkaroundSection]
    embedding: EmbeddingVector


@dataclass
class RetrievalConfig:
    threshold_k: float = 0.5
    metric: str = "cosine_distance"

    def __post_init__(self) -> None:
        if not 0.0 <= self.threshold_k <= 2.0:
            raise ValueError("threshold_k must lie in [0, 2]")


@dataclass
class RetrievalResult:
    best: tuple[MitigationEntry, float] | None
    decision: Decision


class FallbackEmbedder:
    """Deterministic hashed bag-of-words embedder (fixed 512-d, L2-normalized).

    Token buckets come from sha256 so vectors are stable across processes.
    """

    dim = FALLBACK_DIM

    def embed(self, text: str) -> EmbeddingVector:
        if not text.strip():
            raise EmptyText("cannot embed empty text")
        counts = np.zeros(self.dim, dtype=np.float64)
        for token in re.findall(r"[a-z0-9]+", text.lower()):
            bucket = int.from_bytes(hashlib.sha256(token.encode()).digest()[:8], "big") % self.dim
            counts[bucket] += 1.0
        if not counts.any():
            raise EmptyText("text yielded no tokens")
        return EmbeddingVector.from_array(counts)


class HttpEmbedder:
    """Client for a remote embedding service returning {"embedding": [...]}."""

    def __init__(self, url: str, timeout: float = 30.0) -> None:
        self.url = url
        self.timeout = timeout

    def embed(self, text: str) -> EmbeddingVector:
        if not text.strip():
            raise EmptyText("cannot embed empty text")
        try:
            resp = requests.post(self.url, json={"input": text}, timeout=self.timeout)
            resp.raise_for_status()
            values = resp.json()["embedding"]
        except (requests.RequestException, KeyError, ValueError) as exc:
            raise BackendUnavailable(f"embedding backend failed: {exc}") from exc
        return EmbeddingVector.from_array(np.asarray(values, dtype=np.float64))


def embed_description(text: str, backend) -> EmbeddingVector:
    return backend.embed(text)


@dataclass
class MitigationIndex:
    """Immutable exact nearest-neighbor index over normalized entry vectors."""

    entries: list[MitigationEntry] = field(default_factory=list)
    _matrix: np.ndarray | None = None

    @property
    def dim(self) -> int | None:
        return self.entries[0].embedding.dim if self.entries else None

    def matrix(self) -> np.ndarray:
        if self._matrix is None:
            self._matrix = np.stack([e.embedding.as_array() for e in self.entries])
        return self._matrix


def build_index(entries: list[MitigationEntry]) -> MitigationIndex:
    dims = {e.embedding.dim for e in entries}
    if len(dims) > 1:
        raise DimensionMismatch(f"mixed embedding dimensions: {sorted(dims)}")
    # Sorting by cve_id makes argmin resolve distance ties to the smallest id.
    ordered = sorted(entries, key=lambda e: e.cve_id)
    return MitigationIndex(entries=ordered)


def query_nearest(
    index: MitigationIndex, query: EmbeddingVector, cfg: RetrievalConfig | None = None
) -> RetrievalResult:
    """Exact nearest entry by cosine distance d = 1 - dot(query, entry).

    The decision is Resembling iff the best distance is within the threshold
    (boundary inclusive); an empty index always yields TypeBased.
    """
    cfg = cfg or RetrievalConfig()
    if not index.entries:
        return RetrievalResult(best=None, decision=Decision.TYPE_BASED)
    if query.dim != index.dim:
        raise DimensionMismatch(f"query dim {query.dim} != index dim {index.dim}")
    distances = 1.0 - index.matrix() @ query.as_array()
    pos = int(np.argmin(distances))
    best = (index.entries[pos], float(distances[pos]))
    decision = Decision.RESEMBLING if best[1] <= cfg.threshold_k else Decision.TYPE_BASED
    return RetrievalResult(best=best, decision=decision)


def sweep_threshold(
    index: MitigationIndex, queries: list[EmbeddingVector], ks: list[float]
) -> list[tuple[float, int]]:
    """Count Resembling decisions per threshold; counts are monotone in k."""
    if list(ks) != sorted(ks):
        raise ValueError("ks must be sorted ascending")
    best_distances = []
    for q in queries:
        result = query_nearest(index, q, RetrievalConfig(threshold_k=2.0))
        if result.best is not None:
            best_distances.append(result.best[1])
    return [(k, sum(1 for d in best_distances if d <= k)) for k in ks]


INDEX_FORMAT_VERSION = 1


def save_index(index: MitigationIndex, path: Path | str) -> None:
    """Persist as a header line followed by one JSON record per entry."""
    path = Path(path)
    header = {
        "format_version": INDEX_FORMAT_VERSION,
        "dim": index.dim,
        "count": len(index.entries),
        "metric": "cosine_distance",
    }
    with path.open("w", encoding="utf-8") as f:
        f.write(json.dumps(header) + "\n")
        for entry in index.entries:
            record = {
                "cve_id": entry.cve_id,
                "description": entry.description,
                "workarounds": [w.to_dict() for w in entry.workarounds],
                "vector": list(entry.embedding.values),
            }
            f.write(json.dumps(record) + "\n")


def load_index(path: Path | str) -> MitigationIndex:
    path = Path(path)
    with path.open("r", encoding="utf-8") as f:
        header = json.loads(f.readline())
        if header.get("format_version") != INDEX_FORMAT_VERSION:
            raise DimensionMismatch(f"unknown index format version: {header.get('format_version')}")
        entries = []
        for line in f:
            if not line.strip():
                continue
            d = json.loads(line)
            entries.append(
                MitigationEntry(
                    cve_id=d["cve_id"],
                    description=d["description"],
                    workarounds=[WorkaroundSection.from_dict(w) for w in d["workarounds"]],
                    embedding=EmbeddingVector(values=tuple(d["vector"])),
                )
            )
    return build_index(entries)
