from __future__ import annotations

import contextlib
import time

import pytest

from avgpg.mdp import make_two_state
from avgpg.policy import tabular_policy

_RESULTS = pytest.StashKey[dict]()


def pytest_configure(config):
    config.stash[_RESULTS] = {}


class _Outcome:
    def __init__(self):
        self.detail = ""


@pytest.fixture
def acceptance(request):
    """Context manager recording one criterion's pass/fail line and runtime budget."""
    results = request.config.stash[_RESULTS]

    @contextlib.contextmanager
    def record(number: int, title: str, budget_s: float | None = None, spent_s: float = 0.0):
        # spent_s carries time already used by shared fixtures
        out = _Outcome()
        start = time.perf_counter() - spent_s
        try:
            yield out
        except BaseException as exc:
            results[number] = (False, title, f"{out.detail} [{type(exc).__name__}: {exc}]".strip())
            raise
        elapsed = time.perf_counter() - start
        detail = f"{out.detail} ({elapsed:.1f}s".strip() + (f" of {budget_s:g}s budget)" if budget_s else ")")
        if budget_s is not None and elapsed > budget_s:
            results[number] = (False, title, detail + " over budget")
            raise AssertionError(f"criterion {number} exceeded its {budget_s}s budget: {elapsed:.1f}s")
        results[number] = (True, title, detail)

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results = config.stash.get(_RESULTS, {})
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(results):
        ok, title, detail = results[number]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {number:>2}. {title}: {detail}")


@pytest.fixture
def two_state():
    return make_two_state()


@pytest.fixture
def uniform_two_state():
    return tabular_policy(2, 2)

