import json
from pathlib import Path

import numpy as np
import pytest

from stealthlab.kalman import design
from stealthlab.model import StateSpaceModel

GOLDEN = Path(__file__).parent / "golden"

EX1 = dict(
    A=[[2, 0, 0, 0], [0, -1, 0, 0], [1, 0, 1, 0], [0, 0, 0, 2]],
    B=[[1, 0], [1, 0], [0, 2], [0, 1]],
    C=[[0, 0, 2, 0], [0, 1, 0, 1]],
)
EX2 = dict(
    A=[[2, -1, 0, 0, 0], [1, -3, 0, 0, 0], [0, 0, -2, 0, 0], [0, 0, 0, -1, 0], [0, 0, 0, 0, 3]],
    B=[[2, 0], [1, 0], [0, 1], [0, 1], [1, 1]],
    C=[[1, -1, 2, 0, 0], [-1, 2, 0, 3, 0], [2, 1, 0, 0, 4]],
)

ACCEPTANCE_LINES = []


def make_model(ex, name=""):
    A, B, C = (np.array(ex[k], dtype=float) for k in "ABC")
    return StateSpaceModel(A, B, C, 0.5 * np.eye(A.shape[0]), np.eye(C.shape[0]), name=name)


def load_golden(name):
    data = json.loads((GOLDEN / f"{name}.json").read_text())
    return {k: np.array(v) if isinstance(v, list) else v for k, v in data.items()}


@pytest.fixture(scope="session")
def ex1():
    return make_model(EX1, "example1")


@pytest.fixture(scope="session")
def ex2():
    return make_model(EX2, "example2")


@pytest.fixture(scope="session")
def kd1(ex1):
    return design(ex1)


@pytest.fixture(scope="session")
def kd2(ex2):
    return design(ex2)


@pytest.fixture(scope="session")
def gold1():
    return load_golden("example1")


@pytest.fixture(scope="session")
def gold2():
    return load_golden("example2")


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
