import json

import numpy as np
import pytest

from tunebench.space import parse_space


SVM_SPACE_DOC = json.dumps({
    "name": "rbv2_svm",
    "params": [
        {"id": "kernel", "kind": "categorical",
         "levels": ["linear", "polynomial", "radial"]},
        {"id": "cost", "kind": "continuous", "lower": 4.5e-05, "upper": 2.2e4,
         "log": True},
        {"id": "gamma", "kind": "continuous", "lower": 4.5e-05, "upper": 2.2e4,
         "log": True, "parent": "kernel", "parent_values": ["polynomial", "radial"]},
        {"id": "tolerance", "kind": "continuous", "lower": 4.5e-05, "upper": 2.0,
         "log": True},
        {"id": "degree", "kind": "integer", "lower": 2, "upper": 5,
         "parent": "kernel", "parent_values": ["polynomial"]},
        {"id": "imputation", "kind": "categorical",
         "levels": ["impute.mean", "impute.median", "impute.hist"]},
        {"id": "trainsize", "kind": "continuous", "lower": 0.03, "upper": 1.0,
         "budget": True},
    ],
})


def box_space(d: int, budget: bool = True, name: str | None = None):
    """Plain continuous unit box, optionally with a budget parameter."""
    params = [{"id": f"x{i}", "kind": "continuous", "lower": 0.0, "upper": 1.0}
              for i in range(d)]
    if budget:
        params.append({"id": "z", "kind": "continuous", "lower": 2.0 ** -9,
                       "upper": 1.0, "budget": True})
    return parse_space(json.dumps({"name": name or f"box{d}", "params": params}))


# one line per acceptance criterion, echoed after the test summary so the
# verdicts survive pytest's output capture
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def svm_space():
    return parse_space(SVM_SPACE_DOC)


@pytest.fixture
def rng():
    return np.random.default_rng(0)
