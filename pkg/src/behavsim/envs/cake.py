"""The three-state "cake" MDP used to contrast bisimulation with PSM."""

import numpy as np

from ..mdp import TabularMdp


def cake_mdp(r: float, gamma: float, name: str = "") -> TabularMdp:
    """States ``s0, s1, s2``; ``s2`` is terminal.

    From ``s0``, ``a0`` moves to ``s1`` with reward ``r`` and ``a1`` ends the
    episode with nothing. From ``s1`` both actions end the episode and only
    ``a1`` pays ``r``. The optimal policy is therefore ``a0`` then ``a1``.
    """
    if r <= 0:
        raise ValueError(f"r must be positive, got {r}")
    reward = np.array([[r, 0.0], [0.0, r], [0.0, 0.0]])
    transition = np.zeros((3, 2, 3))
    transition[0, 0, 1] = 1.0
    transition[0, 1, 2] = 1.0
    transition[1, :, 2] = 1.0
    transition[2, :, 2] = 1.0
    return TabularMdp(reward, transition, gamma, terminal=[False, False, True], start_states=(0,), name=name)
