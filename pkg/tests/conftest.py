import numpy as np
import pytest

from ivsel import sem_core
from ivsel.estimands import random_feasible_params

_ACCEPTANCE = []


@pytest.fixture
def criterion():
    """Record one acceptance line: criterion(number, passed, detail)."""

    def record(number, passed, detail):
        _ACCEPTANCE.append((number, bool(passed), detail))
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number, passed, detail in sorted(_ACCEPTANCE, key=lambda r: r[0]):
        terminalreporter.write_line(f"[{'PASS' if passed else 'FAIL'}] criterion {number}: {detail}")


@pytest.fixture
def default_params():
    return {"pi": 0.5, "beta": 0.4, "gamma": 0.6, "delta1": 0.5, "delta2": 0.5}


@pytest.fixture
def baseline_model(default_params):
    return sem_core.build_model("baseline", default_params)


def feasible_draws(scenario, count, seed):
    rng = np.random.default_rng(seed)
    return [random_feasible_params(scenario, rng) for _ in range(count)]
