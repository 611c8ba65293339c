import pytest

from bmchaos.rng import substream

CRITERIA = pytest.StashKey[list]()


@pytest.fixture
def rng(request):
    return substream(20260101, request.node.name)


@pytest.fixture(scope="session")
def criterion_lines(request):
    return request.config.stash.setdefault(CRITERIA, [])


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(CRITERIA, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
