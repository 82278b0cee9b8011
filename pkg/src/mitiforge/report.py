"""Evaluation rows, delimited output, and the figures rendered next to it."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


@dataclass
class EvalRow:
    library: str
    cve_id: str
    api: str
    mitigated: bool
    strategy: str
    syntax_rounds: int
    functionality_rounds: int
    functionality_safe: bool | None
    reason: str = ""

    CSV_FIELDS = (
        "library", "cve_id", "api", "mitigated", "strategy",
        "syntax_rounds", "functionality_rounds", "functionality_safe", "reason",
    )

    def to_csv_dict(self) -> dict:
        return {
            "library": self.library,
            "cve_id": self.cve_id,
            "api": self.api,
            "mitigated": str(self.mitigated).lower(),
            "strategy": self.strategy,
            "syntax_rounds": self.syntax_rounds,
            "functionality_rounds": self.functionality_rounds,
            "functionality_safe": (
                "" if self.functionality_safe is None else str(self.functionality_safe).lower()
            ),
            "reason": self.reason,
        }

    @classmethod
    def from_csv_dict(cls, d: dict) -> "EvalRow":
        safe = d.get("functionality_safe", "")
        return cls(
            library=d["library"],
            cve_id=d["cve_id"],
            api=d["api"],
            mitigated=d["mitigated"] == "true",
            strategy=d["strategy"],
            syntax_rounds=int(d["syntax_rounds"]),
            functionality_rounds=int(d["functionality_rounds"]),
            functionality_safe=None if safe == "" else safe == "true",
            reason=d.get("reason", ""),
        )


def rows_to_csv(rows: list[EvalRow]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=EvalRow.CSV_FIELDS, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow(row.to_csv_dict())
    return buf.getvalue()


def rows_from_csv(text: str) -> list[EvalRow]:
    return [EvalRow.from_csv_dict(d) for d in csv.DictReader(io.StringIO(text))]


def aggregate_by_library(rows: list[EvalRow]) -> list[tuple[str, int, str, int, int]]:
    """(library, distinct CVEs, APIs, mitigated, total) per library, manifest order."""
    order: list[str] = []
    grouped: dict[str, list[EvalRow]] = {}
    for row in rows:
        if row.library not in grouped:
            order.append(row.library)
            grouped[row.library] = []
        grouped[row.library].append(row)
    out = []
    for library in order:
        group = grouped[library]
        cves = len({r.cve_id for r in group})
        apis = "/".join(sorted({r.api for r in group}))
        mitigated = sum(1 for r in group if r.mitigated)
        out.append((library, cves, apis, mitigated, len(group)))
    return out


def render_table(rows: list[EvalRow]) -> str:
    """Per-library aggregation plus a totals line, as an aligned text table."""
    agg = aggregate_by_library(rows)
    header = ("Library", "Vul.", "API", "Mitigated")
    body = [(lib, str(cves), apis, f"{mit}/{total}") for lib, cves, apis, mit, total in agg]
    total_mit = sum(1 for r in rows if r.mitigated)
    totals = ("Total", str(len({r.cve_id for r in rows})), "", f"{total_mit}/{len(rows)}")
    widths = [
        max(len(col[i]) for col in [header, *body, totals]) for i in range(len(header))
    ]
    lines = []
    for col in [header, *body, totals]:
        lines.append("  ".join(c.ljust(w) for c, w in zip(col, widths)).rstrip())
    lines.insert(1, "-" * max(len(l) for l in lines))
    lines.insert(len(lines) - 1, "-" * max(len(l) for l in lines[:-1]))
    return "\n".join(lines) + "\n"


def plot_eval(rows: list[EvalRow], path: Path | str) -> None:
    """Bar chart of mitigated vs total per library, saved alongside the CSV."""
    agg = aggregate_by_library(rows)
    libraries = [a[0] for a in agg]
    mitigated = [a[3] for a in agg]
    totals = [a[4] for a in agg]
    fig, ax = plt.subplots(figsize=(max(4.0, 1.2 * len(libraries)), 3.5))
    x = range(len(libraries))
    ax.bar(x, totals, color="#d0d0d0", label="impacted functions")
    ax.bar(x, mitigated, color="#2f6fb4", label="mitigated")
    ax.set_xticks(list(x))
    ax.set_xticklabels(libraries, rotation=30, ha="right")
    ax.set_ylabel("functions")
    ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_sweep(table: list[tuple[float, int]], total_queries: int, path: Path | str) -> None:
    """Resembling-decision count as the threshold widens over the distance range."""
    ks = [k for k, _ in table]
    counts = [c for _, c in table]
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(ks, counts, marker="o", color="#2f6fb4")
    ax.set_xlabel("match-score threshold (cosine distance)")
    ax.set_ylabel("queries decided Resembling")
    ax.set_ylim(0, max(total_queries, max(counts, default=0)) + 1)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def sweep_to_csv(table: list[tuple[float, int]]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["threshold_k", "resembling_count"])
    for k, count in table:
        writer.writerow([k, count])
    return buf.getvalue()
