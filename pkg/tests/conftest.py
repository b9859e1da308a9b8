from __future__ import annotations

from pathlib import Path

import pytest

from ddopt.bundle import load_bundle
from ddopt.canonical import lower_to_model

TRANSPORT = Path(__file__).resolve().parents[1] / "src" / "ddopt" / "data" / "transport"

# criterion number -> (passed, detail); filled by test_acceptance
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


@pytest.fixture
def transport_dir() -> Path:
    return TRANSPORT


@pytest.fixture
def transport():
    return load_bundle(TRANSPORT)


@pytest.fixture
def transport_model(transport):
    return lower_to_model(transport.truth, transport)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
