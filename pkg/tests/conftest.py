import sys
import time
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

_ACCEPTANCE = []


class Criterion:
    """Collects the outcome of one acceptance criterion."""

    def __init__(self, label, budget=None):
        self.label = label
        self.budget = budget
        self.checks = []
        self.start = time.perf_counter()

    def check(self, name, ok, detail=""):
        self.checks.append((name, bool(ok), detail))
        return bool(ok)

    def finish(self):
        elapsed = time.perf_counter() - self.start
        if self.budget is not None:
            self.check(f"runtime < {self.budget:g} s", elapsed < self.budget, f"{elapsed:.2f} s")
        ok = all(c[1] for c in self.checks)
        failed = [f"{n} ({d})" if d else n for n, good, d in self.checks if not good]
        summary = "; ".join(f"{n}: {d}" if d else n for n, _, d in self.checks)
        line = f"[{'PASS' if ok else 'FAIL'}] {self.label} :: {summary}"
        _ACCEPTANCE.append(line)
        print(line)
        assert ok, "failed checks: " + ", ".join(failed)


@pytest.fixture
def criterion():
    made = []

    def make(label, budget=None):
        c = Criterion(label, budget)
        made.append(c)
        return c

    return make


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE:
            terminalreporter.write_line(line)
