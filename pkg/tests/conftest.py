import os
from pathlib import Path

import pytest

from sseplab.acceptance import AcceptanceContext
from sseplab.config import desk_spec_path, load_spec


@pytest.fixture(scope="session")
def acceptance_ctx(tmp_path_factory):
    """Desk-scale context shared by every test that needs the big ensemble.

    Point SSEPLAB_ACCEPT_DIR at a directory to keep the runs between sessions.
    """
    out = os.environ.get("SSEPLAB_ACCEPT_DIR")
    out = Path(out) if out else tmp_path_factory.mktemp("acceptance")
    spec = load_spec(desk_spec_path(), env={})
    return AcceptanceContext(spec, out, workers=os.cpu_count() or 1, log=print)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
