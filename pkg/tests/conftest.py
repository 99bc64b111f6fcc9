"""Collects outcomes of tests marked ``criterion`` and prints one line per acceptance criterion."""

from collections import OrderedDict

import pytest

_RESULTS: "OrderedDict[int, dict]" = OrderedDict()


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion the test belongs to")


def pytest_collection_modifyitems(items):
    for item in items:
        mark = item.get_closest_marker("criterion")
        if mark:
            num, title = mark.args
            _RESULTS.setdefault(num, {"title": title, "outcomes": []})


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if not mark or not (rep.when == "call" or rep.outcome != "passed"):
        return
    reason = ""
    if rep.skipped and isinstance(rep.longrepr, tuple):
        reason = rep.longrepr[2]
    _RESULTS[mark.args[0]]["outcomes"].append((item.name, rep.outcome, reason))


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for num, entry in sorted(_RESULTS.items()):
        outs = entry["outcomes"]
        kinds = {o for _, o, _ in outs}
        if not outs:
            status = "NOT RUN"
        elif "failed" in kinds:
            status = "FAIL"
        elif kinds == {"skipped"}:
            status = "SKIP"
        elif "skipped" in kinds:
            status = "PARTIAL"
        else:
            status = "PASS"
        skipped = [f"{n}: {r}" for n, o, r in outs if o == "skipped"]
        note = f"  [{'; '.join(skipped)}]" if skipped and status != "SKIP" else ""
        if status == "SKIP":
            note = f"  [{skipped[0]}]"
        tr.write_line(f"criterion {num:2d} {status:<7} {entry['title']}{note}")
