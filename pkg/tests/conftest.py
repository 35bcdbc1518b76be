import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for cid in sorted(results, key=lambda c: int(c[1:])):
        status, title, info = results[cid]
        details = ", ".join(f"{k}={v}" for k, v in info.items())
        terminalreporter.write_line(f"{cid} {status}: {title}" + (f" ({details})" if details else ""))
