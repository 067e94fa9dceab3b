"""Collects acceptance outcomes and prints one PASS/FAIL line per criterion."""
import pytest

RESULTS: dict = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        if hasattr(rep, "wasxfail"):
            status = "FAIL"  # known failure, kept visible
        else:
            status = "PASS" if rep.passed else "FAIL"
        measured = "; ".join(str(v) for k, v in item.user_properties if k == "measured")
        RESULTS.setdefault(str(marker.args[0]), []).append((item.name, status, measured))


def pytest_terminal_summary(terminalreporter):
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for cid in sorted(RESULTS, key=lambda c: int(c)):
        subs = RESULTS[cid]
        overall = "PASS" if all(s == "PASS" for _, s, _ in subs) else "FAIL"
        terminalreporter.write_line(f"criterion {cid}: {overall}")
        for name, status, measured in subs:
            tail = f"  [{measured}]" if measured else ""
            terminalreporter.write_line(f"    {status}  {name}{tail}")
