import pytest

from bridgesim import scenario


@pytest.fixture
def fig7():
    """The built-in eight-bridge topology with hosts, VLANs allocated, no services."""
    net, _, _ = scenario.build(scenario.load("vn1_vn2"), timeline=False, services=False)
    return net


@pytest.fixture
def fig7_scenario():
    return scenario.load("vn1_vn2")


ACCEPTANCE_LINES = []


@pytest.fixture
def criterion():
    """Record one acceptance line and fail the test when the criterion is not met."""
    def check(number, title, ok, detail):
        line = f"criterion {number:>2} {'PASS' if ok else 'FAIL'} {title}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        assert ok, line
    return check


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda l: int(l.split()[1])):
            terminalreporter.write_line(line)
