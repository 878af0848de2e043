import json

import numpy as np
import pytest
from hypothesis import settings, strategies as st

from behavsim.envs.cake import cake_mdp
from behavsim.mdp import TabularMdp, random_mdp

settings.register_profile("default", deadline=None, max_examples=40)
settings.load_profile("default")


@st.composite
def mdp_pairs(draw, max_states=6, max_actions=3, gammas=(0.5, 0.9)):
    """Two random MDPs that share the action count and discount."""
    seed = draw(st.integers(0, 2**31 - 1))
    gamma = draw(st.sampled_from(gammas))
    n_actions = draw(st.integers(1, max_actions))
    deterministic = draw(st.booleans())
    rng = np.random.default_rng(seed)
    pair = []
    for name in ("x", "y"):
        n_states = draw(st.integers(1, max_states))
        n_terminal = draw(st.integers(0, min(1, n_states - 1)))
        pair.append(random_mdp(rng, n_states, n_actions, gamma, deterministic, n_terminal, name=name))
    return tuple(pair)


@pytest.fixture
def cakes():
    return cake_mdp(1.0, 0.9, "x"), cake_mdp(3.0, 0.9, "y")


def chain_mdp(n_states, gamma=0.9, reward=1.0):
    """Single-action chain ``0 -> 1 -> ... -> n-1`` with a terminal last state."""
    transition = np.zeros((n_states, 1, n_states))
    for s in range(n_states - 1):
        transition[s, 0, s + 1] = 1.0
    transition[-1, 0, -1] = 1.0
    reward_table = np.zeros((n_states, 1))
    reward_table[:-1] = reward
    terminal = np.zeros(n_states, bool)
    terminal[-1] = True
    return TabularMdp(reward_table, transition, gamma, terminal=terminal)


ACCEPTANCE_KEY = pytest.StashKey[list]()


@pytest.fixture(scope="session")
def acceptance_log(request):
    """Collects one summary line per acceptance criterion for the terminal report."""
    return request.config.stash.setdefault(ACCEPTANCE_KEY, [])


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    entries = config.stash.get(ACCEPTANCE_KEY, [])
    if not entries:
        return
    terminalreporter.section("acceptance criteria")
    for entry in sorted(entries, key=lambda e: e["criterion"]):
        terminalreporter.write_line(entry["line"])
    report = config.rootpath / "acceptance_report.json"
    report.write_text(json.dumps(sorted(entries, key=lambda e: e["criterion"]), indent=2) + "\n")
