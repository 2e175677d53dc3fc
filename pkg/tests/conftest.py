import contextlib
import time

import pytest
from hypothesis import settings

settings.register_profile("lab", deadline=None, max_examples=40)
settings.load_profile("lab")

_CRITERIA: dict[int, str] = {}


class _Record:
    def __init__(self):
        self.detail = ""


@pytest.fixture
def criterion():
    """Context manager that records one pass/fail line per acceptance criterion."""

    @contextlib.contextmanager
    def record(number: int, title: str):
        rec = _Record()
        t0 = time.perf_counter()
        try:
            yield rec
        except BaseException as exc:
            msg = str(exc).splitlines()[0] if str(exc) else type(exc).__name__
            line = f"criterion {number:2d} FAIL  {title}: {rec.detail} [{msg[:160]}]"
            raise
        else:
            line = f"criterion {number:2d} PASS  {title}: {rec.detail}"
        finally:
            line += f" ({time.perf_counter() - t0:.2f} s)"
            _CRITERIA[number] = line
            print(line)

    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for n in sorted(_CRITERIA):
            terminalreporter.write_line(_CRITERIA[n])
