import numpy as np
import pytest
from hypothesis import given, strategies as st

from behavsim.envs.cake import cake_mdp
from behavsim.envs.grid import ALL_TASKS, N_TRAIN, grid_split, load_layouts, task_id
from behavsim.envs.images import read_image, to_bytes, write_image
from behavsim.envs.jumping import (
    HEIGHTS,
    JUMP,
    POSITIONS,
    RIGHT,
    JumpingInstance,
    downsample,
    jumping_build,
    jumping_colored,
    jumping_optimal_policy,
    optimal_trajectory_states,
    render,
    simulate,
    single_jump_actions,
)
from behavsim.envs.lqr import lqr_build
from behavsim.mdp import reachable_states, value_iteration

tasks = st.tuples(st.sampled_from(POSITIONS), st.sampled_from(HEIGHTS))


def test_cake_structure():
    mdp = cake_mdp(2.0, 0.9)
    assert mdp.n_states == 3 and mdp.n_actions == 2
    assert mdp.terminal.tolist() == [False, False, True]
    assert mdp.reward.tolist() == [[2.0, 0.0], [0.0, 2.0], [0.0, 0.0]]
    assert np.argmax(mdp.transition[0, 0]) == 1 and np.argmax(mdp.transition[0, 1]) == 2


def test_all_right_collides():
    inst = JumpingInstance(30, 12)
    result = simulate(inst, [RIGHT] * inst.goal_x)
    assert result["outcome"] == "failure"


@given(tasks)
def test_optimal_jump_succeeds_with_bonus(task):
    inst = JumpingInstance(*task)
    _, column = jumping_optimal_policy(inst)
    result = simulate(inst, single_jump_actions(inst, column))
    assert result["outcome"] == "success"
    assert result["return"] == result["steps"] + 100
    assert inst.obstacle_position - column == 13


@pytest.mark.parametrize("position", [20, 33, 45])
def test_take_off_column_ignores_floor_height(position):
    columns = {jumping_optimal_policy(JumpingInstance(position, h))[1] for h in HEIGHTS}
    assert len(columns) == 1


def test_value_iteration_agrees_with_brute_force():
    inst = JumpingInstance(25, 10)
    mdp, _ = jumping_build(inst)
    values, policy = value_iteration(mdp)
    brute, column = jumping_optimal_policy(inst)
    closure = reachable_states(mdp, brute, [inst.start_state])
    assert np.array_equal(policy[closure], brute[closure])
    assert np.argmax(policy[inst.state_index(column, 0)]) == JUMP


def test_pair_from_the_zero_band_figure():
    a, b = JumpingInstance(25, 10), JumpingInstance(45, 10)
    ta, tb = optimal_trajectory_states(a), optimal_trajectory_states(b)
    assert len(ta) == len(tb) == 55
    assert a.obstacle_position - jumping_optimal_policy(a)[1] == b.obstacle_position - jumping_optimal_policy(b)[1]


def test_unsolvable_geometry_is_reported():
    with pytest.raises(ValueError, match="take-off"):
        jumping_optimal_policy(JumpingInstance(20, 10, agent_start=18))


@pytest.mark.parametrize("kw", [{"obstacle_position": 19}, {"floor_height": 21}, {"color": "blue"}])
def test_invalid_instances(kw):
    args = {"obstacle_position": 25, "floor_height": 10, **kw}
    with pytest.raises(ValueError):
        JumpingInstance(**args)


def test_mdp_is_deterministic_and_episodes_are_bounded():
    inst = JumpingInstance(40, 15)
    mdp, _ = jumping_build(inst)
    assert np.all(mdp.transition.max(axis=2) == 1.0)
    limit = inst.frame_size[1] + 2 * inst.jump_height
    rng = np.random.default_rng(0)
    for _ in range(20):
        assert simulate(inst, rng.integers(0, 2, size=limit))["outcome"] != "running"


def test_render_is_injective_on_reachable_states():
    inst = JumpingInstance(30, 14)
    mdp, renderer = jumping_build(inst)
    uniform = mdp.uniform_policy()
    states = [s for s in reachable_states(mdp, uniform, [inst.start_state])]
    frames = {renderer(s).tobytes() for s in states}
    assert len(frames) == len(states)


def test_render_contents():
    inst = JumpingInstance(30, 14)
    frame = render(inst, inst.start_state)
    assert frame.shape == (60, 60) and frame.min() >= 0 and frame.max() <= 1
    assert np.sum(frame == 0.5) == 81
    assert np.sum(frame[:59 - 14 + 1] == 1.0) == 25  # agent pixels above the floor line


def test_colored_variants():
    white = JumpingInstance(30, 14)
    red_mdp, red_render = jumping_colored(white, "red")
    green_mdp, green_render = jumping_colored(white, "green")
    red = JumpingInstance(30, 14, color="red")
    green = JumpingInstance(30, 14, color="green")
    assert jumping_optimal_policy(red)[1] == jumping_optimal_policy(white)[1]
    assert simulate(green, [RIGHT] * green.goal_x)["outcome"] == "success"
    green_column = jumping_optimal_policy(green)[1]
    assert green_column != jumping_optimal_policy(red)[1]
    strike = simulate(green, single_jump_actions(green, green_column))
    assert strike["outcome"] == "success" and strike["return"] == strike["steps"] + 100
    a, b = red_render(red.start_state), green_render(green.start_state)
    assert a.shape == (60, 60, 3)
    changed = np.any(a != b, axis=2)
    assert changed.sum() == 81
    assert np.all(a[:, :, 2] == b[:, :, 2])
    with pytest.raises(ValueError):
        jumping_colored(white, "white")


def test_downsample_averages_blocks():
    frame = np.arange(16, dtype=float).reshape(4, 4)
    assert downsample(frame, 2).tolist() == [[2.5, 4.5], [10.5, 12.5]]
    with pytest.raises(ValueError):
        downsample(np.zeros((5, 5)), 2)


def test_image_round_trip(tmp_path):
    frame = render(JumpingInstance(25, 10, color="red"), 0)
    write_image(tmp_path / "f.ppm", frame)
    assert np.array_equal(read_image(tmp_path / "f.ppm"), frame)
    grey = render(JumpingInstance(25, 10), 0)
    assert to_bytes(grey).startswith(b"P5\n60 60\n255\n")
    with pytest.raises(ValueError):
        to_bytes(np.full((2, 2), 2.0))


@pytest.mark.parametrize("kind", ["wide", "narrow", "random"])
def test_splits_partition_the_grid(kind):
    split = grid_split(kind, seed=4)
    assert len(split.training_tasks) == N_TRAIN
    assert set(split.training_tasks) | set(split.test_tasks) == set(ALL_TASKS)
    assert not set(split.training_tasks) & set(split.test_tasks)


def test_split_layouts():
    wide = grid_split("wide")
    positions = sorted({p for p, _ in wide.training_tasks})
    assert positions[0] == 20 and positions[-1] == 45
    narrow = grid_split("narrow")
    assert max(p for p, _ in narrow.training_tasks) <= 25
    assert grid_split("random", 3) == grid_split("random", 3)
    assert load_layouts()["version"] == 1
    with pytest.raises(ValueError):
        grid_split("diagonal")


def test_task_ids_are_row_major():
    assert [task_id(t) for t in ALL_TASKS] == list(range(286))


def test_lqr_systems():
    train, test = lqr_build(seed=3, n_d=40)
    assert len(train) == 2 and len(test) == 10
    for env in train + test:
        assert np.allclose(env.W_d.T @ env.W_d, np.eye(20), atol=1e-10)
        assert np.allclose(env.W_c.T @ env.W_c, np.eye(20), atol=1e-10)
        assert np.array_equal(env.A, train[0].A)
    assert np.max(np.abs(np.linalg.eigvals(train[0].A))) == pytest.approx(0.8, abs=1e-10)
    again, _ = lqr_build(seed=3, n_d=40)
    assert all(np.array_equal(a.W_d, b.W_d) for a, b in zip(train, again))
    assert not np.allclose(train[0].W_d, train[1].W_d)
    with pytest.raises(ValueError):
        lqr_build(seed=0, n_d=10)
