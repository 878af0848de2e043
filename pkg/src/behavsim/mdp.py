"""Finite MDPs, optimal policies, rollouts and policy-divergence solves.

A policy is a plain ``(n_states, n_actions)`` array of action probabilities.
Terminal states are absorbing, reward-free, and carry the uniform row.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

MAX_SWEEPS = 10_000
ROW_TOL = 1e-12


class ConvergenceError(RuntimeError):
    """A fixed-point solve hit its iteration cap."""

    def __init__(self, message: str, residual: float, iterations: int):
        super().__init__(f"{message} (residual={residual:.3e} after {iterations} iterations)")
        self.residual = residual
        self.iterations = iterations


def _frozen(a, dtype=float) -> np.ndarray:
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class TabularMdp:
    """Finite MDP with explicit reward and transition tables.

    ``reward[s, a]`` is the expected reward, ``transition[s, a]`` a distribution
    over next states. Terminal states must be zero-reward self-loops.
    """

    reward: np.ndarray
    transition: np.ndarray
    gamma: float
    terminal: np.ndarray = None
    start_states: tuple = (0,)
    name: str = ""

    def __post_init__(self):
        reward = _frozen(self.reward)
        transition = _frozen(self.transition)
        if reward.ndim != 2:
            raise ValueError(f"reward must be 2-D (states x actions), got shape {reward.shape}")
        n_states, n_actions = reward.shape
        if transition.shape != (n_states, n_actions, n_states):
            raise ValueError(
                f"transition must have shape {(n_states, n_actions, n_states)}, got {transition.shape}"
            )
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError(f"gamma must lie in [0, 1), got {self.gamma}")
        if np.any(transition < 0.0) or np.any(np.abs(transition.sum(axis=2) - 1.0) > ROW_TOL):
            raise ValueError("every transition row must be a probability distribution")
        terminal = np.zeros(n_states, bool) if self.terminal is None else self.terminal
        terminal = _frozen(terminal, bool)
        if terminal.shape != (n_states,):
            raise ValueError("terminal must hold one flag per state")
        for s in np.flatnonzero(terminal):
            if np.any(reward[s] != 0.0) or np.any(transition[s, :, s] != 1.0):
                raise ValueError(f"terminal state {s} must be a zero-reward self-loop")
        starts = tuple(int(s) for s in np.atleast_1d(self.start_states))
        if not starts or any(not 0 <= s < n_states for s in starts):
            raise ValueError("start_states must be a nonempty subset of the states")
        object.__setattr__(self, "reward", reward)
        object.__setattr__(self, "transition", transition)
        object.__setattr__(self, "terminal", terminal)
        object.__setattr__(self, "start_states", starts)
        object.__setattr__(self, "gamma", float(self.gamma))

    @property
    def n_states(self) -> int:
        return self.reward.shape[0]

    @property
    def n_actions(self) -> int:
        return self.reward.shape[1]

    def policy_transition(self, policy: np.ndarray) -> np.ndarray:
        """State-to-state matrix ``P^pi``."""
        return np.einsum("sa,sat->st", policy, self.transition)

    def policy_reward(self, policy: np.ndarray) -> np.ndarray:
        return np.einsum("sa,sa->s", policy, self.reward)

    def uniform_policy(self) -> np.ndarray:
        return np.full((self.n_states, self.n_actions), 1.0 / self.n_actions)

    def to_dict(self) -> dict:
        return {
            "n_states": self.n_states,
            "n_actions": self.n_actions,
            "gamma": self.gamma,
            "reward": self.reward.tolist(),
            "transition": self.transition.tolist(),
            "terminal": self.terminal.tolist(),
            "start_states": list(self.start_states),
        }

    @classmethod
    def from_dict(cls, doc: dict, name: str = "") -> "TabularMdp":
        missing = [k for k in ("n_states", "n_actions", "gamma", "reward", "transition") if k not in doc]
        if missing:
            raise ValueError(f"MDP document is missing field(s): {', '.join(missing)}")
        n_states, n_actions = int(doc["n_states"]), int(doc["n_actions"])
        reward = np.asarray(doc["reward"], dtype=float)
        if reward.ndim == 1:
            reward = reward.reshape(n_states, n_actions)
        transition = np.asarray(doc["transition"], dtype=float)
        if reward.shape != (n_states, n_actions):
            raise ValueError(f"field 'reward': expected {n_states}x{n_actions}, got shape {reward.shape}")
        if transition.shape != (n_states, n_actions, n_states):
            raise ValueError(
                f"field 'transition': expected shape {(n_states, n_actions, n_states)}, got {transition.shape}"
            )
        return cls(
            reward=reward,
            transition=transition,
            gamma=float(doc["gamma"]),
            terminal=doc.get("terminal"),
            start_states=tuple(doc.get("start_states", (0,))),
            name=name,
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str, name: str = "") -> "TabularMdp":
        return cls.from_dict(json.loads(text), name=name)


@dataclass(frozen=True)
class Trajectory:
    """States visited by a rollout together with the policy rows used there."""

    states: tuple
    action_dists: np.ndarray
    source_mdp: str = ""
    truncated: bool = False
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        dists = _frozen(self.action_dists)
        if dists.ndim != 2 or len(self.states) != dists.shape[0]:
            raise ValueError("states and action_dists must be aligned")
        object.__setattr__(self, "states", tuple(int(s) for s in self.states))
        object.__setattr__(self, "action_dists", dists)

    def __len__(self) -> int:
        return len(self.states)


def check_policy(mdp: TabularMdp, policy) -> np.ndarray:
    policy = np.asarray(policy, dtype=float)
    if policy.shape != (mdp.n_states, mdp.n_actions):
        raise ValueError(f"policy shape {policy.shape} does not match MDP {(mdp.n_states, mdp.n_actions)}")
    if np.any(policy < 0.0) or np.any(np.abs(policy.sum(axis=1) - 1.0) > 1e-9):
        raise ValueError("policy rows must be probability distributions")
    return policy


def greedy_policy(q: np.ndarray, terminal: np.ndarray) -> np.ndarray:
    """One-hot argmax rows; ties go to the lowest action index."""
    n_states, n_actions = q.shape
    policy = np.zeros_like(q)
    policy[np.arange(n_states), np.argmax(q, axis=1)] = 1.0
    policy[terminal] = 1.0 / n_actions
    return policy


def _q_values(mdp: TabularMdp, values: np.ndarray) -> np.ndarray:
    return mdp.reward + mdp.gamma * mdp.transition @ values


def value_iteration(mdp: TabularMdp, tol: float = 1e-10, return_residuals: bool = False):
    """Optimal values and the greedy optimal policy.

    Stops once the sup-norm Bellman residual is at most ``tol``. The returned
    policy breaks ties in favour of the lowest action index, with a relative
    slack of ``1e-9`` so that floating-point noise does not decide ties.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    values = np.zeros(mdp.n_states)
    residuals = []
    for _ in range(MAX_SWEEPS):
        new_values = _q_values(mdp, values).max(axis=1)
        residual = float(np.max(np.abs(new_values - values), initial=0.0))
        residuals.append(residual)
        values = new_values
        if residual <= tol:
            break
    else:
        raise ConvergenceError("value iteration did not converge; is the MDP valid?", residuals[-1], MAX_SWEEPS)
    q = _q_values(mdp, values)
    # Near-ties count as ties so the lowest index wins deterministically.
    slack = 1e-9 * max(1.0, float(np.max(np.abs(q), initial=0.0)))
    best = q.max(axis=1, keepdims=True)
    choice = np.argmax(q >= best - slack, axis=1)
    policy = np.zeros_like(q)
    policy[np.arange(mdp.n_states), choice] = 1.0
    policy[mdp.terminal] = 1.0 / mdp.n_actions
    if return_residuals:
        return values, policy, residuals
    return values, policy


def policy_evaluation(mdp: TabularMdp, policy) -> np.ndarray:
    """Exact state values of ``policy`` via a linear solve."""
    policy = check_policy(mdp, policy)
    p = mdp.policy_transition(policy)
    r = mdp.policy_reward(policy)
    return np.linalg.solve(np.eye(mdp.n_states) - mdp.gamma * p, r)


def rollout(
    mdp: TabularMdp,
    policy,
    start: int,
    max_steps: int,
    seed: int = 0,
    include_terminal: bool = True,
) -> Trajectory:
    """Follow ``policy`` from ``start``.

    Actions and stochastic transitions are sampled from a generator seeded with
    ``seed``; the stored action distributions are the policy rows themselves.
    Stops on reaching a terminal state (kept unless ``include_terminal`` is
    false) or after ``max_steps`` states, which flags the result as truncated.
    """
    policy = check_policy(mdp, policy)
    if not 0 <= start < mdp.n_states:
        raise ValueError(f"start state {start} out of range")
    if max_steps < 1:
        raise ValueError("max_steps must be at least 1")
    rng = np.random.default_rng(seed)
    states = [int(start)]
    truncated = False
    while not mdp.terminal[states[-1]]:
        if len(states) >= max_steps:
            truncated = True
            break
        s = states[-1]
        a = rng.choice(mdp.n_actions, p=policy[s]) if policy[s].max() < 1.0 else int(np.argmax(policy[s]))
        row = mdp.transition[s, a]
        nxt = rng.choice(mdp.n_states, p=row) if row.max() < 1.0 else int(np.argmax(row))
        states.append(int(nxt))
    if not include_terminal and mdp.terminal[states[-1]] and len(states) > 1:
        states.pop()
    return Trajectory(states=tuple(states), action_dists=policy[states], source_mdp=mdp.name, truncated=truncated)


def epsilon_suboptimal(optimal, eps: float) -> np.ndarray:
    """Put ``1 - eps`` on each row's greedy action and spread ``eps`` over the rest.

    Uniform rows (terminal states) are left as they are.
    """
    if not 0.0 <= eps <= 1.0:
        raise ValueError(f"eps must lie in [0, 1], got {eps}")
    optimal = np.asarray(optimal, dtype=float)
    if eps == 0.0:
        return optimal.copy()
    n_actions = optimal.shape[1]
    if n_actions == 1:
        return optimal.copy()
    out = np.full_like(optimal, eps / (n_actions - 1))
    best = np.argmax(optimal, axis=1)
    out[np.arange(len(optimal)), best] = 1.0 - eps
    uniform = np.all(np.isclose(optimal, 1.0 / n_actions), axis=1)
    out[uniform] = optimal[uniform]
    return out


def tv_rows(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    return 0.5 * np.abs(p - q).sum(axis=-1)


def discounted_policy_divergence(mdp: TabularMdp, pi_tilde, pi_star, return_residual: bool = False):
    """Expected discounted TV between ``pi_tilde`` and ``pi_star`` along ``pi_tilde``.

    Solves ``v = TV(pi_tilde, pi_star) + gamma * P^pi_tilde v`` exactly.
    """
    pi_tilde = check_policy(mdp, pi_tilde)
    pi_star = check_policy(mdp, pi_star)
    tv = tv_rows(pi_tilde, pi_star)
    p = mdp.policy_transition(pi_tilde)
    v = np.linalg.solve(np.eye(mdp.n_states) - mdp.gamma * p, tv)
    residual = float(np.max(np.abs(tv + mdp.gamma * p @ v - v), initial=0.0))
    if residual > 1e-10:
        # Refine once; the system is a gamma-contraction so this cannot diverge.
        for _ in range(MAX_SWEEPS):
            v = tv + mdp.gamma * p @ v
            residual = float(np.max(np.abs(tv + mdp.gamma * p @ v - v)))
            if residual <= 1e-10:
                break
    v = np.clip(v, 0.0, 1.0 / (1.0 - mdp.gamma))
    if return_residual:
        return v, residual
    return v


def reachable_states(mdp: TabularMdp, policy, starts: Sequence[int]) -> list:
    """States reachable from ``starts`` under ``policy``, in discovery order."""
    p = mdp.policy_transition(policy)
    order = list(dict.fromkeys(int(s) for s in starts))
    seen = set(order)
    i = 0
    while i < len(order):
        for t in np.flatnonzero(p[order[i]] > 0.0):
            if int(t) not in seen:
                seen.add(int(t))
                order.append(int(t))
        i += 1
    return order


def restrict(mdp: TabularMdp, policy, states: Sequence[int]):
    """Sub-MDP on a set of states closed under ``policy``.

    Returns the sub-MDP, the restricted policy and the kept state ids. Actions
    that would leave the set are redirected to a self-loop; they carry zero
    probability under ``policy`` so policy-grounded metrics are unaffected.
    """
    policy = check_policy(mdp, policy)
    states = list(states)
    index = {s: i for i, s in enumerate(states)}
    p = mdp.policy_transition(policy)
    for s in states:
        if any(int(t) not in index for t in np.flatnonzero(p[s] > 0.0)):
            raise ValueError(f"state set is not closed under the policy (leaks from state {s})")
    n, n_actions = len(states), mdp.n_actions
    transition = np.zeros((n, n_actions, n))
    reward = mdp.reward[states].copy()
    for i, s in enumerate(states):
        for a in range(n_actions):
            row = mdp.transition[s, a]
            targets = np.flatnonzero(row > 0.0)
            if all(int(t) in index for t in targets):
                for t in targets:
                    transition[i, a, index[int(t)]] = row[t]
            else:
                transition[i, a, i] = 1.0
    starts = [index[s] for s in mdp.start_states if s in index] or [0]
    sub = TabularMdp(
        reward=reward,
        transition=transition,
        gamma=mdp.gamma,
        terminal=mdp.terminal[states],
        start_states=tuple(starts),
        name=mdp.name,
    )
    return sub, policy[states], states


def random_mdp(
    rng: np.random.Generator,
    n_states: int,
    n_actions: int,
    gamma: float,
    deterministic: bool = False,
    n_terminal: int = 0,
    name: str = "",
) -> TabularMdp:
    """Random MDP for property tests; the last ``n_terminal`` states are absorbing."""
    reward = rng.uniform(-1.0, 1.0, size=(n_states, n_actions))
    transition = np.zeros((n_states, n_actions, n_states))
    for s in range(n_states):
        for a in range(n_actions):
            if deterministic:
                transition[s, a, rng.integers(n_states)] = 1.0
            else:
                support = rng.choice(n_states, size=min(n_states, int(rng.integers(1, 4))), replace=False)
                transition[s, a, support] = rng.dirichlet(np.ones(len(support)))
    terminal = np.zeros(n_states, bool)
    for s in range(n_states - n_terminal, n_states):
        terminal[s] = True
        reward[s] = 0.0
        transition[s] = 0.0
        transition[s, :, s] = 1.0
    # Renormalise away Dirichlet roundoff so rows sum to one within 1e-12.
    transition /= transition.sum(axis=2, keepdims=True)
    return TabularMdp(reward, transition, gamma, terminal=terminal, start_states=(0,), name=name)


def log_iteration_cap(tol: float, gamma: float) -> int:
    """Sweep cap ``ceil(log(tol (1 - gamma)) / log gamma) + 64``."""
    if gamma <= 0.0:
        return 64
    return int(math.ceil(math.log(tol * (1.0 - gamma)) / math.log(gamma))) + 64
