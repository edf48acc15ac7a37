import csv
from pathlib import Path

import pytest

DATA = Path(__file__).parent / "data"


def read_rows(name):
    with open(DATA / name, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture(scope="session")
def forecast_rows():
    return read_rows("forecast_table.csv")


@pytest.fixture(scope="session")
def device_rows():
    return read_rows("device_table.csv")


_CRITERIA = {}


class _Criterion:
    def __init__(self, name):
        self.name = name
        self.detail = ""

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc_type is None:
            _CRITERIA[self.name] = ("PASS", self.detail)
        else:
            msg = str(exc).splitlines()[0] if str(exc) else exc_type.__name__
            _CRITERIA[self.name] = ("FAIL", self.detail if self.detail and msg in self.detail else
                                     f"{self.detail} | {msg}".strip(" |"))
        return False


@pytest.fixture
def criterion():
    """``with criterion("P1") as c: ...`` records one acceptance line; set ``c.detail`` for context."""
    return _Criterion


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_CRITERIA):
        status, detail = _CRITERIA[name]
        terminalreporter.write_line(f"{name}: {status}  {detail}")
