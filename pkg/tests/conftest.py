"""Collects one verdict line per acceptance criterion and prints them at the
end of the run (tests marked ``@pytest.mark.criterion(id, title)``)."""

import pytest

_LINES = []


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(id, title): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or not (rep.when == "call" or (rep.when == "setup" and rep.failed)):
        return
    detail = dict(item.user_properties).get("detail", "")
    if rep.failed and not detail:
        detail = str(call.excinfo.value).splitlines()[0][:120] if call.excinfo else ""
    status = "PASS" if rep.passed else ("SKIP" if rep.skipped else "FAIL")
    if hasattr(rep, "wasxfail"):
        # known gap: report the real verdict, the run itself stays green
        status = "PASS" if rep.passed else "FAIL"
        if rep.skipped and call.excinfo:
            detail = detail or str(call.excinfo.value).splitlines()[0][:120]
        detail = f"{detail} [known gap: {rep.wasxfail}]"
    _LINES.append(f"{status}  {mark.args[0]:<3} {mark.args[1]}" + (f" | {detail}" if detail else ""))


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for line in _LINES:
            terminalreporter.write_line(line)
