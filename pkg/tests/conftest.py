import numpy as np
import pytest

from finesched.profile import Catalog, SubnetRecord, default_catalog
from finesched.tracegen import Trace


@pytest.fixture
def catalog():
    return default_catalog()


def make_catalog(rows, pareto=False):
    """rows: (id, accuracy, {batch: latency_us})"""
    return Catalog(tuple(SubnetRecord(i, a, p) for i, a, p in rows), pareto=pareto)


def trace_of(arrivals_us, slo_us=36_000, duration_us=None):
    return Trace.from_arrivals(np.asarray(arrivals_us, dtype=np.int64), slo_us, duration_us)


_CRITERIA = "finesched_acceptance"


@pytest.fixture
def criterion(request):
    """Record one acceptance line; it is echoed now and in the terminal summary."""
    lines = request.config.__dict__.setdefault(_CRITERIA, {})

    def record(number, name, ok, detail=""):
        line = f"criterion {number:2d} {'PASS' if ok else 'FAIL'}  {name}: {detail}"
        lines[number] = line
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.__dict__.get(_CRITERIA)
    if lines:
        terminalreporter.section("acceptance criteria")
        for k in sorted(lines):
            terminalreporter.write_line(lines[k])
