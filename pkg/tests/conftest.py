import contextlib
import time

import pytest

_RESULTS = pytest.StashKey[list]()


class _Outcome:
    detail = ""


@pytest.fixture
def criterion(request):
    """Context manager recording one PASS/FAIL line for an acceptance criterion."""
    lines = request.config.stash.setdefault(_RESULTS, [])

    @contextlib.contextmanager
    def run(number, title):
        out = _Outcome()
        t0 = time.perf_counter()
        try:
            yield out
        except pytest.skip.Exception as exc:
            status, note = "SKIP", str(exc)
            raise
        except BaseException as exc:
            status, note = "FAIL", f"{type(exc).__name__}: {str(exc).splitlines()[0] if str(exc) else ''}"
            raise
        else:
            status, note = "PASS", out.detail
        finally:
            line = f"[{status}] criterion {number:2d} {title} ({time.perf_counter() - t0:.1f}s) {note}".rstrip()
            lines.append(line)
            print(line)

    return run


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_RESULTS, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split("criterion")[1].split()[0])):
            terminalreporter.write_line(line)
