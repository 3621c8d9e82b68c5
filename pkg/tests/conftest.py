import pytest

from irpm import _backend


@pytest.fixture(params=_backend.AVAILABLE)
def backend(request):
    """Run the test once per available kernel backend."""
    previous = _backend.name
    _backend.set_backend(request.param)
    yield request.param
    _backend.set_backend(previous)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.RESULTS):
        if mod.RESULTS[n]:
            terminalreporter.write_line(mod.RESULTS[n])
