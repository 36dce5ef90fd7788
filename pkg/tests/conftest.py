import pytest

from nasality_si import synth_corpus


@pytest.fixture(scope="session")
def default_corpus(tmp_path_factory):
    """The default desk corpus: 8 speakers x 12 utterances, seed 7."""
    out = tmp_path_factory.mktemp("corpus8")
    manifest = synth_corpus.build_corpus(8, 12, 7, out)
    return out, manifest


@pytest.fixture(scope="session")
def default_prepared(default_corpus):
    from nasality_si.dataset import prepare_from_corpus

    return prepare_from_corpus(default_corpus[0])


# One pass/fail line per acceptance criterion at the end of the run.
_CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    number, title = marker.args
    failed = report.failed or (report.when == "call" and report.skipped)
    if report.when == "call" or failed:
        prev = _CRITERIA.get(number)
        status = "FAIL" if failed or (prev and prev[1] == "FAIL") else "PASS"
        details = [v for k, v in item.user_properties if k == "detail"]
        _CRITERIA[number] = (title, status, details)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        title, status, details = _CRITERIA[number]
        tr.write_line(f"criterion {number:2d} {status}: {title}")
        for d in details:
            for line in str(d).splitlines():
                tr.write_line(f"    {line}")
