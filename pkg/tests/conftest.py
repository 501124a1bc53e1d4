import os
import sys
import time

import pytest

sys.path.insert(0, os.path.dirname(__file__))

from reachnav.scenario import load_scenario, parse_scenario  # noqa: E402
from reachnav.simulation import run_scenario  # noqa: E402

_CACHE = {}
CRITERIA = []


def scenario_run(name, start_index=None, **overrides):
    """Run a bundled scenario once per session; overrides patch the raw JSON.

    Returns ``(spec, log, result, seconds)``.
    """
    key = (name, start_index, tuple(sorted(overrides.items())))
    if key not in _CACHE:
        spec = load_scenario(name)
        if overrides:
            raw = spec.to_json()
            raw.update(overrides)
            spec = parse_scenario(raw, name)
        start = spec.starts[start_index] if start_index is not None else None
        t0 = time.perf_counter()
        log, res = run_scenario(spec, start=start)
        _CACHE[key] = (spec, log, res, time.perf_counter() - t0)
    return _CACHE[key]


@pytest.fixture(scope="session")
def run():
    return scenario_run


def record_criterion(number, label, passed, detail=""):
    line = f"criterion {number:>2} [{label}]: {passed} {detail}".rstrip()
    CRITERIA.append((number, label, line))
    print(line)


@pytest.fixture
def criterion():
    return record_criterion


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for _, _, line in sorted(CRITERIA, key=lambda c: (c[0], c[1])):
        terminalreporter.write_line(line)
