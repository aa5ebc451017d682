import numpy as np
import pytest

from adpp import scenario
from adpp.problem import ProblemSpec


@pytest.fixture(scope="session")
def sensors():
    return scenario.build()


@pytest.fixture(scope="session")
def sensors_stationary():
    return scenario.build(stationary=True)


def random_problem(rng, n_users=2, max_states=2, max_actions=2, K=2, name="random"):
    state_cards = tuple(int(x) for x in rng.integers(1, max_states + 1, n_users))
    action_cards = tuple(int(x) for x in rng.integers(1, max_actions + 1, n_users))
    nA, nS = int(np.prod(action_cards)), int(np.prod(state_cards))
    costs = rng.uniform(-1, 1, size=(K + 1, nA, nS))
    return ProblemSpec(state_cards, action_cards, costs, rng.uniform(-0.5, 0.5, K),
                       p_max=np.ones(K + 1), p_min=-np.ones(K + 1), name=name)


@pytest.fixture
def make_problem():
    return random_problem


_ACCEPTANCE = pytest.StashKey[dict]()


@pytest.fixture
def acceptance(request):
    """Record one acceptance-criterion verdict; the terminal summary prints them all."""
    store = request.config.stash.setdefault(_ACCEPTANCE, {})

    def record(number: int, title: str, ok: bool, detail: str) -> bool:
        store[number] = (title, ok, detail)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    store = config.stash.get(_ACCEPTANCE, {})
    if not store:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(store):
        title, ok, detail = store[n]
        terminalreporter.write_line(f"criterion {n} {'PASS' if ok else 'FAIL'}: {title} | {detail}")
