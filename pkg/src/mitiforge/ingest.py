"""CVE feed ingestion and workaround extraction.

Parses NVD JSON 2.0 feeds into vulnerability records, fetches and caches
reference pages, strips them to plain text, and locates workaround sections
by a fixed keyword roster.
"""
from __future__ import annotations

import gzip
import hashlib
import json
import os
import re
import tempfile
import time
from dataclasses import dataclass, field
from enum import Enum
from html import unescape
from html.parser import HTMLParser
from pathlib import Path

import requests

from .errors import CacheMiss, HttpStatusError, MalformedFeed, NetworkError, UnsupportedFormat

CVE_ID_RE = re.compile(r"^CVE-\d{4}-\d{4,}$")

#: Phrases that mark the start of a mitigation section on an advisory page.
WORKAROUND_KEYWORDS = (
    "Workaround",
    "Work Around",
    "Workout Around",
    "How to Prevent",
    "Mitigation",
    "Remediation",
    "Recommended Action",
    "Recommendation",
    "Actions to Take",
    "Solution",
)

#: A line this short that contains a roster keyword is treated as a heading.
HEADING_MAX_LEN = 80


class RefTag(str, Enum):
    MITIGATION = "Mitigation"
    EXPLOIT = "Exploit"
    PATCH = "Patch"
    VENDOR_ADVISORY = "VendorAdvisory"
    OTHER = "Other"


_TAG_ALIASES = {
    "mitigation": RefTag.MITIGATION,
    "exploit": RefTag.EXPLOIT,
    "patch": RefTag.PATCH,
    "vendor advisory": RefTag.VENDOR_ADVISORY,
    "vendoradvisory": RefTag.VENDOR_ADVISORY,
}


@dataclass(frozen=True)
class ReferenceLink:
    url: str
    tags: frozenset[RefTag] = field(default_factory=frozenset)


@dataclass
class VulnRecord:
    cve_id: str
    description: str
    cwes: list[tuple[str, str]] = field(default_factory=list)
    references: list[ReferenceLink] = field(default_factory=list)
    published: str = ""

    def to_dict(self) -> dict:
        return {
            "cve_id": self.cve_id,
            "description": self.description,
            "cwes": [list(c) for c in self.cwes],
            "references": [
                {"url": r.url, "tags": sorted(t.value for t in r.tags)} for r in self.references
            ],
            "published": self.published,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "VulnRecord":
        return cls(
            cve_id=d["cve_id"],
            description=d["description"],
            cwes=[tuple(c) for c in d.get("cwes", [])],
            references=[
                ReferenceLink(r["url"], frozenset(RefTag(t) for t in r.get("tags", [])))
                for r in d.get("references", [])
            ],
            published=d.get("published", ""),
        )


@dataclass(frozen=True)
class WorkaroundSection:
    source_url: str
    matched_keyword: str
    text: str
    char_span: tuple[int, int]

    def to_dict(self) -> dict:
        return {
            "source_url": self.source_url,
            "matched_keyword": self.matched_keyword,
            "text": self.text,
            "char_span": list(self.char_span),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "WorkaroundSection":
        return cls(d["source_url"], d["matched_keyword"], d["text"], tuple(d["char_span"]))


@dataclass
class ParsedFeed:
    records: list[VulnRecord]
    skipped: int


def map_tag(raw: str) -> RefTag:
    return _TAG_ALIASES.get(raw.strip().lower(), RefTag.OTHER)


def parse_cve_feed(feed_bytes: bytes, fmt: str = "nvd-json-2.0") -> ParsedFeed:
    """Parse an NVD JSON 2.0 feed (plain or gzip) into vulnerability records.

    Records without a usable description are skipped and counted in the result.
    """
    if fmt != "nvd-json-2.0":
        raise UnsupportedFormat(f"unsupported feed format: {fmt}")
    if feed_bytes[:2] == b"\x1f\x8b":
        feed_bytes = gzip.decompress(feed_bytes)
    try:
        doc = json.loads(feed_bytes.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        offset = getattr(exc, "pos", None)
        if offset is None:
            offset = getattr(exc, "start", None)
        raise MalformedFeed(str(exc), offset) from exc

    records: list[VulnRecord] = []
    skipped = 0
    for item in doc.get("vulnerabilities", []):
        cve = item.get("cve", {})
        cve_id = cve.get("id", "")
        description = _english_description(cve)
        if not cve_id or not CVE_ID_RE.match(cve_id) or not description.strip():
            skipped += 1
            continue
        cwes = []
        for weakness in cve.get("weaknesses", []):
            for desc in weakness.get("description", []):
                value = desc.get("value", "")
                if value.startswith("CWE-"):
                    cwes.append((value, desc.get("name", "")))
        refs = []
        for ref in cve.get("references", []):
            url = ref.get("url", "")
            if not url:
                continue
            tags = frozenset(map_tag(t) for t in ref.get("tags", []))
            refs.append(ReferenceLink(url=url, tags=tags))
        records.append(
            VulnRecord(
                cve_id=cve_id,
                description=description.strip(),
                cwes=cwes,
                references=refs,
                published=cve.get("published", ""),
            )
        )
    return ParsedFeed(records=records, skipped=skipped)


def _english_description(cve: dict) -> str:
    descriptions = cve.get("descriptions", [])
    for d in descriptions:
        if d.get("lang") == "en":
            return d.get("value", "")
    if descriptions:
        return descriptions[0].get("value", "")
    return ""


def cache_paths(cache_dir: Path, url: str) -> tuple[Path, Path]:
    digest = hashlib.sha256(url.encode("utf-8")).hexdigest()
    return cache_dir / f"{digest}.body", cache_dir / f"{digest}.meta"


def fetch_reference(
    link: ReferenceLink,
    cache_dir: Path | str,
    offline: bool = False,
    session: requests.Session | None = None,
) -> bytes:
    """Return the reference page body, serving from the URL-keyed cache when possible.

    Offline mode never touches the network and raises ``CacheMiss`` for uncached URLs.
    Cache writes go through a temp file then rename so concurrent fetchers stay safe.
    """
    cache_dir = Path(cache_dir)
    body_path, meta_path = cache_paths(cache_dir, link.url)
    if body_path.exists():
        return body_path.read_bytes()
    if offline:
        raise CacheMiss(f"offline mode and no cache entry for {link.url}")

    http = session or requests
    try:
        resp = http.get(link.url, timeout=30)
    except requests.RequestException as exc:
        raise NetworkError(f"fetch failed for {link.url}: {exc}") from exc
    if not 200 <= resp.status_code < 300:
        raise HttpStatusError(resp.status_code, link.url)

    cache_dir.mkdir(parents=True, exist_ok=True)
    body = resp.content
    _atomic_write(body_path, body)
    meta = {"url": link.url, "fetched_at": time.time(), "status": resp.status_code}
    _atomic_write(meta_path, json.dumps(meta).encode("utf-8"))
    return body


def _atomic_write(path: Path, data: bytes) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


_BLOCK_ELEMENTS = {
    "p", "div", "br", "li", "ul", "ol", "table", "tr", "td", "th",
    "h1", "h2", "h3", "h4", "h5", "h6", "section", "article", "header",
    "footer", "pre", "blockquote", "hr", "dt", "dd",
}


class _TextExtractor(HTMLParser):
    def __init__(self) -> None:
        super().__init__(convert_charrefs=True)
        self.parts: list[str] = []
        self._skip_depth = 0

    def handle_starttag(self, tag, attrs):
        if tag in ("script", "style"):
            self._skip_depth += 1
        elif tag in _BLOCK_ELEMENTS:
            self.parts.append("\n")

    def handle_endtag(self, tag):
        if tag in ("script", "style"):
            self._skip_depth = max(0, self._skip_depth - 1)
        elif tag in _BLOCK_ELEMENTS:
            self.parts.append("\n")

    def handle_data(self, data):
        if not self._skip_depth:
            self.parts.append(data)


def html_to_text(page: bytes) -> str:
    """Render an HTML page to plain text.

    Script and style content is dropped, block elements become line breaks, and
    runs of whitespace collapse to single spaces within each line.
    """
    raw = page.decode("utf-8", errors="replace")
    extractor = _TextExtractor()
    extractor.feed(raw)
    extractor.close()
    text = unescape("".join(extractor.parts))
    lines = []
    for line in text.split("\n"):
        collapsed = re.sub(r"\s+", " ", line).strip()
        if collapsed:
            lines.append(collapsed)
    return "\n".join(lines)


def _keyword_in_line(line: str) -> str | None:
    """Return the roster keyword a heading-like line contains, if any."""
    stripped = line.strip()
    if not stripped or len(stripped) > HEADING_MAX_LEN:
        return None
    low = stripped.lower()
    for keyword in WORKAROUND_KEYWORDS:
        if re.search(r"(?<!\w)" + re.escape(keyword.lower()) + r"(?!\w)", low):
            return keyword
    return None


def extract_workaround_sections(page_text: str, source_url: str) -> list[WorkaroundSection]:
    """Locate workaround sections anchored at keyword headings.

    A section spans the content after a heading-like keyword line up to the next
    heading-like keyword line (or end of text). Sections are returned in
    document order; the section text is the exact substring at ``char_span``.
    """
    headings: list[tuple[int, int, str]] = []  # (line_start_offset, line_end_offset, keyword)
    offset = 0
    for line in page_text.splitlines(keepends=True):
        keyword = _keyword_in_line(line)
        if keyword is not None:
            headings.append((offset, offset + len(line), keyword))
        offset += len(line)

    sections: list[WorkaroundSection] = []
    for i, (_, content_start, keyword) in enumerate(headings):
        content_end = headings[i + 1][0] if i + 1 < len(headings) else len(page_text)
        if content_end <= content_start:
            continue
        text = page_text[content_start:content_end]
        if not text.strip():
            continue
        sections.append(
            WorkaroundSection(
                source_url=source_url,
                matched_keyword=keyword,
                text=text,
                char_span=(content_start, content_end),
            )
        )
    return sections
