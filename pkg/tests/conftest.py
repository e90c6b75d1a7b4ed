from __future__ import annotations

import pytest

from sasesim.atomsolver import conservation_log

DRIFT_TOL = 1e-8
COHERENCE_TOL = 1e-8
# rounding can leave populations and yield increments some ulps below zero
POPULATION_TOL = -1e-12
MONOTONE_TOL = -1e-14

ACCEPTANCE_LINES = pytest.StashKey[list]()


@pytest.fixture
def acceptance_report(request):
    """Record one PASS/FAIL line per acceptance criterion; returns the verdict."""
    lines = request.config.stash.setdefault(ACCEPTANCE_LINES, [])

    def record(number: int, ok: bool, detail: str) -> bool:
        line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        lines.append((number, line))
        print(line)
        return ok

    return record


@pytest.fixture(autouse=True)
def _conservation_guard(request):
    """Fail any test whose propagations break the conservation invariants."""
    start = len(conservation_log)
    yield
    if request.node.get_closest_marker("unresolved_grid"):
        del conservation_log[start:]
        return
    bad = []
    for s in conservation_log[start:]:
        if s.get("n_runs", 0) == 0:
            continue
        if (s["max_drift"] > DRIFT_TOL or s["min_dq"] < MONOTONE_TOL
                or s["max_coherence_excess"] > COHERENCE_TOL
                or s["min_population"] < POPULATION_TOL):
            bad.append(s)
    if bad:
        pytest.fail(f"conservation violated: {bad[:3]}")


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE_LINES, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
    runs = sum(s.get("n_runs", 0) for s in conservation_log)
    if runs:
        worst = max(s.get("max_drift", 0.0) for s in conservation_log)
        terminalreporter.write_line(
            f"conservation: {runs} propagations checked, worst drift {worst:.2e}"
        )
