import pytest

from mixedsing.grid import GridSpec, build_grid
from mixedsing.operator import MixedOperator


@pytest.fixture(scope="session")
def box2():
    return build_grid(GridSpec(2, "box", 9))


@pytest.fixture(scope="session")
def op2(box2):
    return MixedOperator(box2, 0.5)


@pytest.fixture(scope="session")
def op3():
    return MixedOperator(build_grid(GridSpec(3, "box", 5)), 0.3)


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for res in sorted(RESULTS, key=lambda r: r.number):
            terminalreporter.write_line(res.line())
