"""Feed parsing, reference caching, HTML stripping, and workaround extraction."""
from __future__ import annotations

import gzip
import json
import re

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mitiforge.errors import CacheMiss, HttpStatusError, MalformedFeed, NetworkError, UnsupportedFormat
from mitiforge.ingest import (
    HEADING_MAX_LEN,
    WORKAROUND_KEYWORDS,
    ReferenceLink,
    RefTag,
    VulnRecord,
    cache_paths,
    extract_workaround_sections,
    fetch_reference,
    html_to_text,
    map_tag,
    parse_cve_feed,
)


def _feed(vulns: list[dict]) -> bytes:
    return json.dumps({"vulnerabilities": vulns}).encode("utf-8")


def _vuln(cve_id="CVE-2021-44228", description="Remote code execution in lookups.",
          cwes=(), refs=()):
    item = {
        "cve": {
            "id": cve_id,
            "published": "2021-12-10T00:00:00Z",
            "descriptions": [{"lang": "en", "value": description}],
            "weaknesses": [
                {"description": [{"value": cid, "name": name}]} for cid, name in cwes
            ],
            "references": [{"url": url, "tags": list(tags)} for url, tags in refs],
        }
    }
    return item


class TestParseFeed:
    def test_basic_record(self):
        feed = parse_cve_feed(_feed([
            _vuln(cwes=[("CWE-502", "Deserialization of Untrusted Data")],
                  refs=[("https://adv.example/a", ["Mitigation", "Vendor Advisory"])]),
        ]))
        assert feed.skipped == 0
        (rec,) = feed.records
        assert rec.cve_id == "CVE-2021-44228"
        assert rec.description == "Remote code execution in lookups."
        assert rec.cwes == [("CWE-502", "Deserialization of Untrusted Data")]
        assert rec.references[0].tags == frozenset({RefTag.MITIGATION, RefTag.VENDOR_ADVISORY})
        assert rec.published == "2021-12-10T00:00:00Z"

    def test_skips_record_without_description(self):
        empty = _vuln(cve_id="CVE-2020-0001", description="   ")
        feed = parse_cve_feed(_feed([empty, _vuln()]))
        assert feed.skipped == 1
        assert [r.cve_id for r in feed.records] == ["CVE-2021-44228"]

    def test_skips_malformed_cve_id(self):
        feed = parse_cve_feed(_feed([_vuln(cve_id="GHSA-xxxx")]))
        assert feed.skipped == 1 and feed.records == []

    def test_gzip_transparent(self):
        raw = _feed([_vuln()])
        assert len(parse_cve_feed(gzip.compress(raw)).records) == 1

    def test_malformed_json_reports_offset(self):
        with pytest.raises(MalformedFeed) as exc:
            parse_cve_feed(b'{"vulnerabilities": [')
        assert exc.value.offset is not None

    def test_unsupported_format(self):
        with pytest.raises(UnsupportedFormat):
            parse_cve_feed(b"{}", fmt="csv")

    def test_non_english_description_fallback(self):
        item = _vuln()
        item["cve"]["descriptions"] = [{"lang": "es", "value": "ejecucion remota"}]
        feed = parse_cve_feed(_feed([item]))
        assert feed.records[0].description == "ejecucion remota"

    def test_non_cwe_weakness_value_ignored(self):
        item = _vuln(cwes=[("NVD-CWE-noinfo", "")])
        item["cve"]["weaknesses"][0]["description"][0]["value"] = "NVD-CWE-noinfo"
        feed = parse_cve_feed(_feed([item]))
        assert feed.records[0].cwes == []

    def test_record_round_trip(self, log4shell):
        assert VulnRecord.from_dict(log4shell.to_dict()) == log4shell


class TestMapTag:
    @pytest.mark.parametrize("raw,expected", [
        ("Mitigation", RefTag.MITIGATION),
        ("mitigation", RefTag.MITIGATION),
        ("Exploit", RefTag.EXPLOIT),
        ("Patch", RefTag.PATCH),
        ("Vendor Advisory", RefTag.VENDOR_ADVISORY),
        ("Third Party Advisory", RefTag.OTHER),
    ])
    def test_mapping(self, raw, expected):
        assert map_tag(raw) is expected


class _FakeResponse:
    def __init__(self, status_code=200, content=b"page"):
        self.status_code = status_code
        self.content = content


class _FakeSession:
    def __init__(self, response=None, error=None):
        self.response = response or _FakeResponse()
        self.error = error
        self.calls = 0

    def get(self, url, timeout):
        self.calls += 1
        if self.error is not None:
            raise self.error
        return self.response


class TestFetchReference:
    LINK = ReferenceLink("https://adv.example/a", frozenset({RefTag.MITIGATION}))

    def test_fetch_writes_cache(self, tmp_path):
        session = _FakeSession(_FakeResponse(content=b"hello"))
        body = fetch_reference(self.LINK, tmp_path, session=session)
        assert body == b"hello"
        body_path, meta_path = cache_paths(tmp_path, self.LINK.url)
        assert body_path.read_bytes() == b"hello"
        assert json.loads(meta_path.read_text())["url"] == self.LINK.url

    def test_cache_hit_skips_network(self, tmp_path):
        session = _FakeSession(_FakeResponse(content=b"hello"))
        fetch_reference(self.LINK, tmp_path, session=session)
        fetch_reference(self.LINK, tmp_path, session=session)
        assert session.calls == 1

    def test_offline_cache_miss(self, tmp_path):
        with pytest.raises(CacheMiss):
            fetch_reference(self.LINK, tmp_path, offline=True)

    def test_offline_cache_hit(self, tmp_path):
        body_path, _ = cache_paths(tmp_path, self.LINK.url)
        body_path.write_bytes(b"cached")
        assert fetch_reference(self.LINK, tmp_path, offline=True) == b"cached"

    def test_http_error_status(self, tmp_path):
        session = _FakeSession(_FakeResponse(status_code=404))
        with pytest.raises(HttpStatusError) as exc:
            fetch_reference(self.LINK, tmp_path, session=session)
        assert exc.value.code == 404
        body_path, _ = cache_paths(tmp_path, self.LINK.url)
        assert not body_path.exists()

    def test_network_error(self, tmp_path):
        import requests

        session = _FakeSession(error=requests.ConnectionError("refused"))
        with pytest.raises(NetworkError):
            fetch_reference(self.LINK, tmp_path, session=session)


class TestHtmlToText:
    def test_blocks_become_lines(self):
        html = b"<html><body><h2>Mitigation</h2><p>Do  the\tthing.</p></body></html>"
        assert html_to_text(html) == "Mitigation\nDo the thing."

    def test_script_and_style_dropped(self):
        html = b"<p>keep</p><script>var x = 'drop';</script><style>p{}</style><p>tail</p>"
        text = html_to_text(html)
        assert "drop" not in text and "p{}" not in text
        assert text == "keep\ntail"

    def test_entities_unescaped(self):
        assert html_to_text(b"<p>a &amp; b &lt;c&gt;</p>") == "a & b <c>"

    def test_plain_text_passthrough(self):
        assert html_to_text(b"just words") == "just words"

    @given(st.lists(st.sampled_from(
        ["<p>", "</p>", "<div>", "</div>", "word", "Mitigation", "&amp;", " ", "<script>x</script>"]
    ), max_size=30))
    @settings(max_examples=50, deadline=None)
    def test_no_residual_tags(self, parts):
        text = html_to_text("".join(parts).encode("utf-8"))
        assert not re.search(r"</?(p|div|script)>", text)
        assert not re.search(r"[ \t]{2,}", text)


def _page(keyword: str) -> tuple[str, tuple[int, int]]:
    """A page whose single section follows one keyword heading."""
    intro = "Advisory overview line.\n"
    heading = f"{keyword}\n"
    body = "Upgrade or disable the feature.\nSecond line of advice.\n"
    page = intro + heading + body
    start = len(intro) + len(heading)
    return page, (start, len(page))


class TestWorkaroundExtraction:
    @pytest.mark.parametrize("keyword", WORKAROUND_KEYWORDS)
    def test_each_roster_keyword(self, keyword):
        page, span = _page(keyword)
        sections = extract_workaround_sections(page, "https://adv.example/a")
        assert len(sections) == 1
        section = sections[0]
        assert section.matched_keyword == keyword
        assert section.char_span == span
        assert section.text == page[span[0]: span[1]]
        assert section.source_url == "https://adv.example/a"

    def test_no_keyword_page(self):
        page = "Nothing interesting here.\nJust an overview of the advisory.\n"
        assert extract_workaround_sections(page, "u") == []

    def test_two_section_page(self):
        intro = "Overview.\n"
        h1 = "Mitigation\n"
        b1 = "Set the safe property.\n"
        h2 = "Solution\n"
        b2 = "Upgrade to 2.17.0.\n"
        page = intro + h1 + b1 + h2 + b2
        sections = extract_workaround_sections(page, "u")
        assert [s.matched_keyword for s in sections] == ["Mitigation", "Solution"]
        first_start = len(intro) + len(h1)
        assert sections[0].char_span == (first_start, first_start + len(b1))
        assert sections[0].text == b1
        second_start = len(intro) + len(h1) + len(b1) + len(h2)
        assert sections[1].char_span == (second_start, len(page))
        assert sections[1].text == b2

    def test_long_line_is_not_a_heading(self):
        filler = "x" * HEADING_MAX_LEN
        page = f"Mitigation advice follows {filler}\nBody text.\n"
        assert extract_workaround_sections(page, "u") == []

    def test_keyword_requires_word_boundary(self):
        page = "Solutions catalog\nNot a heading match for the bare keyword? No.\n"
        # "Solutions" must not match the roster keyword "Solution"
        sections = extract_workaround_sections(page, "u")
        assert sections == []

    def test_heading_case_insensitive(self):
        page = "Intro.\nWORKAROUND\nDisable lookups.\n"
        (section,) = extract_workaround_sections(page, "u")
        assert section.matched_keyword == "Workaround"

    def test_heading_with_no_content_skipped(self):
        page = "Intro.\nMitigation\n"
        assert extract_workaround_sections(page, "u") == []

    def test_span_is_exact_substring(self):
        page, _ = _page("Remediation")
        (section,) = extract_workaround_sections(page, "u")
        assert page[section.char_span[0]: section.char_span[1]] == section.text
