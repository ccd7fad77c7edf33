"""Shared test plumbing: the acceptance checklist printer.

Acceptance tests wrap their assertions in criterion(); every criterion
prints one PASS/FAIL line in the terminal summary regardless of how the
run went, so the checklist is visible even when something breaks early.
"""

import contextlib

_RESULTS: dict[int, tuple[str, bool]] = {}


def record_criterion(num: int, desc: str, ok: bool) -> None:
    _RESULTS[num] = (desc, ok)


@contextlib.contextmanager
def criterion(num: int, desc: str):
    """Record PASS when the block completes, FAIL when it raises."""
    try:
        yield
    except BaseException:
        record_criterion(num, desc, False)
        raise
    record_criterion(num, desc, True)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _RESULTS:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for num in sorted(_RESULTS):
        desc, ok = _RESULTS[num]
        tr.write_line(f"CRITERION {num} [{'PASS' if ok else 'FAIL'}] {desc}")
