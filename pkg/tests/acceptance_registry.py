"""Shared registry for acceptance-criterion outcomes.

Each acceptance test wraps its body in `criterion(...)`; the context manager
records pass/fail and prints one line per criterion, and conftest echoes the
collected lines again in the terminal summary.
"""

import time
from contextlib import contextmanager

RESULTS: dict[int, tuple[str, bool, float]] = {}


def _line(number: int, name: str, passed: bool, elapsed: float) -> str:
    verdict = "PASS" if passed else "FAIL"
    return f"criterion {number} ({name}): {verdict}  [{elapsed:.1f}s]"


@contextmanager
def criterion(number: int, name: str, max_seconds: float | None = None):
    start = time.perf_counter()
    try:
        yield
        elapsed = time.perf_counter() - start
        passed = max_seconds is None or elapsed <= max_seconds
    except BaseException:
        elapsed = time.perf_counter() - start
        RESULTS[number] = (name, False, elapsed)
        print(_line(number, name, False, elapsed))
        raise
    RESULTS[number] = (name, passed, elapsed)
    print(_line(number, name, passed, elapsed))
    if max_seconds is not None:
        assert elapsed <= max_seconds, (
            f"criterion {number} took {elapsed:.1f}s, budget {max_seconds:.0f}s"
        )
