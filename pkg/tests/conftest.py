import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def random_d(rng, scale=1.0):
    return rng.normal(size=3) * scale + 1j * rng.normal(size=3) * scale


# -- acceptance summary ------------------------------------------------------------------
# Tests marked ``acceptance(n, title, limit_s)`` get one PASS/FAIL line each in the
# terminal summary, in criterion order.

_acceptance: dict = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(number, title, limit_s): numbered acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("acceptance")
    if mark is None:
        return
    n, title, limit = mark.args
    entry = _acceptance.setdefault(n, {"title": title, "limit": limit, "ok": True, "seconds": 0.0})
    if rep.when == "call":
        entry["seconds"] = rep.duration
    if rep.failed:
        entry["ok"] = False


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_acceptance):
        e = _acceptance[n]
        status = "PASS" if e["ok"] else "FAIL"
        terminalreporter.write_line(
            f"criterion {n:2d}: {status}  {e['title']}  ({e['seconds']:.1f} s, limit {e['limit']} s)")
