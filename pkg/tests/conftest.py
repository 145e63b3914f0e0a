import os

import pytest

# (criterion, passed, detail) lines collected by the acceptance suite
ACCEPTANCE_LINES = []


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance: long-running recovery-study criteria")


def pytest_collection_modifyitems(config, items):
    if os.environ.get("GPCM_SKIP_ACCEPTANCE"):
        skip = pytest.mark.skip(reason="GPCM_SKIP_ACCEPTANCE is set")
        for item in items:
            if "acceptance" in item.keywords:
                item.add_marker(skip)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for name, passed, detail in ACCEPTANCE_LINES:
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'}  {name}: {detail}")
