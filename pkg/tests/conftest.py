from __future__ import annotations

import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from fixture_data import (  # noqa: E402
    historical_entry,
    impacted_function,
    impacted_slice,
    log4shell_record,
    xstream_record,
)

GOLDEN_DIR = Path(__file__).parent / "golden"


@pytest.fixture
def golden_dir() -> Path:
    return GOLDEN_DIR


@pytest.fixture
def log4shell():
    return log4shell_record()


@pytest.fixture
def xstream_vuln():
    return xstream_record()


@pytest.fixture
def impacted():
    return impacted_function()


@pytest.fixture
def context_slice():
    return impacted_slice()


@pytest.fixture
def hist_entry():
    return historical_entry()
