import time

import pytest

_RESULTS: dict[int, tuple[str, bool, str, float]] = {}


class Criterion:
    """Collects the sub-checks of one acceptance criterion."""

    def __init__(self, number: int, title: str):
        self.number, self.title = number, title
        self.checks: list[tuple[str, bool]] = []
        self.start = time.perf_counter()

    def check(self, label: str, ok) -> bool:
        self.checks.append((label, bool(ok)))
        return bool(ok)

    @property
    def passed(self) -> bool:
        return bool(self.checks) and all(ok for _, ok in self.checks)

    def failures(self) -> list[str]:
        return [label for label, ok in self.checks if not ok]


@pytest.fixture
def criterion(request):
    made = []

    def make(number: int, title: str) -> Criterion:
        c = Criterion(number, title)
        made.append(c)
        return c

    yield make
    for c in made:
        elapsed = time.perf_counter() - c.start
        detail = "; ".join(c.failures()) if c.checks else "no checks ran"
        _RESULTS[c.number] = (c.title, c.passed, detail, elapsed)


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_RESULTS):
        title, ok, detail, secs = _RESULTS[n]
        line = f"{'PASS' if ok else 'FAIL'} criterion {n}: {title} ({secs:.1f} s)"
        if not ok:
            line += f" -- failed: {detail}"
        terminalreporter.write_line(line)
