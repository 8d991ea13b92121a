from __future__ import annotations

import pytest

from nstamp.calibration import calibrated_models
from nstamp.executive import TaskSpec
from nstamp.pddl import load_disassembly_domain, load_disassembly_problem
from nstamp.world import DisturbanceConfig


@pytest.fixture(scope="session")
def domain():
    return load_disassembly_domain()


@pytest.fixture(scope="session")
def problem(domain):
    return load_disassembly_problem(domain)


@pytest.fixture(scope="session")
def task(problem):
    return TaskSpec(problem.init, problem.goal, 10)


@pytest.fixture(scope="session")
def models():
    """Classifiers calibrated on nominal scenes, identity pose estimators."""
    return calibrated_models(DisturbanceConfig(), seed=42)


@pytest.fixture
def report(capsys):
    """Print one acceptance line even when pytest captures output."""
    def emit(criterion: int, ok: bool, detail: str) -> None:
        with capsys.disabled():
            print(f"\nACCEPTANCE C{criterion:<2} {'PASS' if ok else 'FAIL'}  {detail}")
    return emit
