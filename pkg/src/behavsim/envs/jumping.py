"""Pixel jumping task: run right, jump once over an obstacle, reach the edge.

The agent walks 1 px right per step. A jump follows a fixed diagonal arc of
``2 * jump_height`` steps (up-right, then down-right) during which actions are
ignored. With the default geometry exactly one take-off column clears the
obstacle, 13 px before its left edge, whatever the floor height.

States are ``(x, phase)`` pairs, ``phase = 0`` on the ground, plus a success
and a failure terminal. Images use row 0 at the top.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..mdp import TabularMdp

RIGHT, JUMP = 0, 1
ACTIONS = ("right", "jump")
POSITIONS = tuple(range(20, 46))
HEIGHTS = tuple(range(10, 21))
COLORS = ("white", "red", "green")
STEP_REWARD = 1.0
EDGE_BONUS = 100.0

AGENT_SHADE = 1.0
AGENT_ASCENT_SHADE = 0.75
OBSTACLE_SHADE = 0.5
FLOOR_SHADE = 1.0
OBSTACLE_RGB = {"white": (OBSTACLE_SHADE,) * 3, "red": (1.0, 0.0, 0.0), "green": (0.0, 1.0, 0.0)}


@dataclass(frozen=True)
class JumpingInstance:
    obstacle_position: int
    floor_height: int
    color: str = "white"
    frame_size: tuple = (60, 60)
    jump_height: int = 15
    agent_size: int = 5
    obstacle_size: int = 9
    agent_start: int = 0

    def __post_init__(self):
        if self.obstacle_position not in POSITIONS:
            raise ValueError(f"obstacle_position must lie in {POSITIONS[0]}..{POSITIONS[-1]}")
        if self.floor_height not in HEIGHTS:
            raise ValueError(f"floor_height must lie in {HEIGHTS[0]}..{HEIGHTS[-1]}")
        if self.color not in COLORS:
            raise ValueError(f"color must be one of {COLORS}")
        height, width = self.frame_size
        top = self.floor_height + self.jump_height + self.agent_size
        if top >= height or self.obstacle_position + self.obstacle_size > width:
            raise ValueError("geometry does not fit inside the frame")

    @property
    def task(self) -> tuple:
        return (self.obstacle_position, self.floor_height)

    @property
    def goal_x(self) -> int:
        return self.frame_size[1] - self.agent_size

    @property
    def n_phases(self) -> int:
        return 2 * self.jump_height

    @property
    def n_states(self) -> int:
        return self.goal_x * self.n_phases + 2

    @property
    def success_state(self) -> int:
        return self.goal_x * self.n_phases

    @property
    def failure_state(self) -> int:
        return self.success_state + 1

    @property
    def start_state(self) -> int:
        return self.state_index(self.agent_start, 0)

    def state_index(self, x: int, phase: int) -> int:
        return phase * self.goal_x + x

    def decode(self, state: int) -> tuple:
        """``(x, phase)`` of a non-terminal state."""
        if state >= self.success_state:
            raise ValueError(f"state {state} is terminal")
        phase, x = divmod(state, self.goal_x)
        return x, phase

    def lift(self, phase: int) -> int:
        return phase if phase <= self.jump_height else self.n_phases - phase

    def collides(self, x: int, phase: int) -> bool:
        c = self.obstacle_position
        overlap = x + self.agent_size > c and x < c + self.obstacle_size
        return overlap and self.lift(phase) < self.obstacle_size

    def obstacle_distance(self, state: int) -> int:
        """Columns between the agent's left edge and the obstacle's left edge."""
        x, _ = self.decode(state)
        return self.obstacle_position - x


def _successor(inst: JumpingInstance, x: int, phase: int, action: int):
    """Next ``(x, phase)``, or ``"success"`` / ``"failure"``, plus the reward."""
    if phase == 0 and action == JUMP:
        phase = 1
    elif phase > 0:
        phase = (phase + 1) % inst.n_phases
    x += 1
    if inst.collides(x, phase):
        if inst.color == "green":
            return "success", STEP_REWARD + EDGE_BONUS
        return "failure", 0.0
    if x >= inst.goal_x:
        bonus = 0.0 if inst.color == "green" else EDGE_BONUS
        return "success", STEP_REWARD + bonus
    return (x, phase), STEP_REWARD


def jumping_build(instance: JumpingInstance):
    """Deterministic MDP for ``instance`` and its state renderer."""
    inst = instance
    n = inst.n_states
    reward = np.zeros((n, 2))
    transition = np.zeros((n, 2, n))
    for phase in range(inst.n_phases):
        for x in range(inst.goal_x):
            s = inst.state_index(x, phase)
            for a in (RIGHT, JUMP):
                nxt, r = _successor(inst, x, phase, a)
                if nxt == "success":
                    t = inst.success_state
                elif nxt == "failure":
                    t = inst.failure_state
                else:
                    t = inst.state_index(*nxt)
                reward[s, a] = r
                transition[s, a, t] = 1.0
    terminal = np.zeros(n, bool)
    for t in (inst.success_state, inst.failure_state):
        transition[t, :, t] = 1.0
        terminal[t] = True
    name = f"jumping-{inst.color}-{inst.obstacle_position}-{inst.floor_height}"
    mdp = TabularMdp(reward, transition, 0.99, terminal=terminal, start_states=(inst.start_state,), name=name)
    return mdp, lambda state: render(inst, state)


def jumping_colored(instance: JumpingInstance, color: str):
    """Red or green variant of ``instance``; see ``jumping_build``."""
    if color not in ("red", "green"):
        raise ValueError(f"color must be 'red' or 'green', got {color!r}")
    return jumping_build(JumpingInstance(**{**instance.__dict__, "color": color}))


def simulate(instance: JumpingInstance, actions) -> dict:
    """Play an action sequence from the start; returns outcome, return and states."""
    x, phase = instance.agent_start, 0
    states = [instance.start_state]
    total = 0.0
    for a in actions:
        nxt, r = _successor(instance, x, phase, int(a))
        total += r
        if isinstance(nxt, str):
            return {"outcome": nxt, "return": total, "states": states, "steps": len(states)}
        x, phase = nxt
        states.append(instance.state_index(x, phase))
    return {"outcome": "running", "return": total, "states": states, "steps": len(states)}


def single_jump_actions(instance: JumpingInstance, column: int) -> list:
    n = instance.goal_x - instance.agent_start
    return [JUMP if instance.agent_start + i == column else RIGHT for i in range(n)]


def jumping_optimal_policy(instance: JumpingInstance):
    """Optimal policy and take-off column, by trying every single-jump column.

    Right everywhere except at the take-off state; terminal rows uniform. For
    the green variant the all-right plan (column ``None``) is also a candidate;
    the best green plan still jumps, one column early, so that the agent comes
    down onto the obstacle and strikes it after the longest possible episode.
    """
    inst = instance
    tried = range(inst.agent_start, inst.goal_x)
    best = None
    if inst.color == "green":
        best = (simulate(inst, [RIGHT] * inst.goal_x)["return"], None)
    for column in tried:
        result = simulate(inst, single_jump_actions(inst, column))
        if result["outcome"] == "success" and (best is None or result["return"] > best[0]):
            best = (result["return"], column)
    if best is None:
        raise ValueError(
            f"no take-off column in {tried.start}..{tried.stop - 1} clears the obstacle at {inst.obstacle_position}"
        )
    column = best[1]
    policy = np.zeros((inst.n_states, 2))
    policy[:, RIGHT] = 1.0
    if column is not None:
        s = inst.state_index(column, 0)
        policy[s] = (0.0, 1.0)
    policy[[inst.success_state, inst.failure_state]] = 0.5
    return policy, column


def render(instance: JumpingInstance, state: int) -> np.ndarray:
    """Frame for ``state``: ``(H, W)`` in [0, 1], or ``(H, W, 3)`` for colored obstacles.

    Success shows the scene without the agent, failure an empty frame.
    """
    inst = instance
    height, width = inst.frame_size
    rgb = inst.color != "white"
    frame = np.zeros((height, width, 3) if rgb else (height, width))
    if state == inst.failure_state:
        return frame
    ground = height - inst.floor_height  # first row of the floor line
    frame[ground] = FLOOR_SHADE
    c, o = inst.obstacle_position, inst.obstacle_size
    frame[ground - o : ground, c : c + o] = OBSTACLE_RGB[inst.color] if rgb else OBSTACLE_SHADE
    if state == inst.success_state:
        return frame
    x, phase = inst.decode(state)
    lift, a = inst.lift(phase), inst.agent_size
    shade = AGENT_ASCENT_SHADE if 0 < phase <= inst.jump_height else AGENT_SHADE
    frame[ground - lift - a : ground - lift, x : x + a] = shade
    return frame


def downsample(frame: np.ndarray, factor: int = 2) -> np.ndarray:
    """Block-average by ``factor`` along both image axes."""
    if factor == 1:
        return frame
    h, w = frame.shape[:2]
    if h % factor or w % factor:
        raise ValueError(f"frame {h}x{w} is not divisible by {factor}")
    return frame.reshape(h // factor, factor, w // factor, factor, *frame.shape[2:]).mean(axis=(1, 3))


def optimal_trajectory_states(instance: JumpingInstance) -> list:
    """Non-terminal states visited by the optimal policy, in order."""
    _, column = jumping_optimal_policy(instance)
    actions = single_jump_actions(instance, column) if column is not None else [RIGHT] * instance.goal_x
    return simulate(instance, actions)["states"]
