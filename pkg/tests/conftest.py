"""Per-criterion PASS/FAIL summary for tests marked ``@pytest.mark.acceptance(number, title)``.

A criterion passes when every test carrying its marker passed. Tests can add
measured values to the summary line through the ``acceptance_note`` fixture.
"""

import pytest


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(number, title): acceptance criterion checked by this test")
    config._acceptance = {}


def _entry(item):
    mark = item.get_closest_marker("acceptance")
    if mark is None:
        return None
    number, title = mark.args
    return item.config._acceptance.setdefault(number, {"title": title, "ok": True, "notes": []})


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    entry = _entry(item)
    if entry is not None and (rep.failed or rep.skipped):
        entry["ok"] = False


@pytest.fixture
def acceptance_note(request):
    entry = _entry(request.node)

    def note(text):
        entry["notes"].append(text)
        print(f"criterion {request.node.get_closest_marker('acceptance').args[0]}: {text}")

    return note


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results = config._acceptance
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(results):
        r = results[number]
        notes = "; ".join(r["notes"])
        line = f"{'PASS' if r['ok'] else 'FAIL'} criterion {number}: {r['title']}"
        terminalreporter.write_line(line + (f" ({notes})" if notes else ""))
