from importlib import resources

import pytest

from opcost.feedback import FeedbackStore
from opcost.models import OperatorModel
from opcost.plan import OperatorKind as K
from opcost.plan import load_plans

DATA = resources.files("opcost") / "data"


@pytest.fixture
def example_plan():
    return load_plans(str(DATA / "example_plan.json"))[0]


@pytest.fixture
def example_store():
    return FeedbackStore.load(str(DATA / "example_feedback.jsonl"))


@pytest.fixture
def example_pivot():
    from opcost.combiner import PivotChoice

    return PivotChoice(2, 200.0, 20.0)


@pytest.fixture
def perfect_models():
    # act_cost = 0.01 * C_out for every leaf record in the fixture
    return {k: OperatorModel.from_coefficients(k, [0, 0.01, 0, 0]) for k in (K.TABLE_SCAN, K.INDEX_SEEK, K.INDEX_SCAN)}


def pytest_terminal_summary(terminalreporter):
    import sys

    module = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    if module is None or not module.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in module.summary_lines():
        terminalreporter.write_line(line)
