from pathlib import Path

import pytest

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture
def example_maze_lines():
    """Prompt token text and published action text of the 7x7 reference maze."""
    prompt, actions = (FIXTURES / "example_maze_7x7.txt").read_text().strip().splitlines()
    return prompt, actions


# -- acceptance criteria summary ---------------------------------------------
#
# Tests marked ``@pytest.mark.criterion("id", "title")`` are grouped by id; the
# terminal summary prints one PASS/FAIL line per criterion. A criterion passes
# only if every test attached to it passed. Details are attached by the tests
# through the ``record_property`` fixture under the key "detail".

_CRITERIA: dict[str, dict] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    if report.when == "call" or (report.when == "setup" and not report.passed):
        cid, title = marker.args
        entry = _CRITERIA.setdefault(cid, {"title": title, "ok": True, "notes": []})
        passed = report.passed and not hasattr(report, "wasxfail")
        entry["ok"] &= passed
        details = [str(v) for k, v in item.user_properties if k == "detail"]
        if not passed:
            status = "xfail" if hasattr(report, "wasxfail") else ("skipped" if report.skipped else "failed")
            details.append(f"{item.name} {status}")
        entry["notes"].extend(details)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for cid in sorted(_CRITERIA):
        e = _CRITERIA[cid]
        notes = "; ".join(e["notes"])
        terminalreporter.write_line(f"{'PASS' if e['ok'] else 'FAIL'} {cid} {e['title']}" + (f" -- {notes}" if notes else ""))
