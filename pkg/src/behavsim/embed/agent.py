"""Imitation learning on the jumping task with an optional metric-embedding auxiliary loss.

Each epoch walks once over the pooled (observation, optimal action) pairs of
the training tasks in mini-batches. Every mini-batch step also samples one
ordered pair of distinct training tasks and adds ``alpha`` times the
auxiliary loss computed on their full optimal trajectories.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ..envs.jumping import RIGHT, JumpingInstance, downsample, jumping_build, jumping_optimal_policy, render, simulate
from ..mdp import reachable_states, restrict, rollout
from ..metrics import pi_bisimulation, psm_trajectory_dp
from .losses import cme_total_loss_grad, imitation_loss_grad, l2_metric_loss_grad
from .model import EmbeddingModel

AGENT_METHODS = ("imitation_only", "pse", "l2_psm", "cme_pi_bisim", "l2_pi_bisim")
GAMMA = 0.99
LOG_FIELDS = ("epoch", "train_loss", "aux_loss", "test_solve_pct")


def as_instance(task, color: str = "white") -> JumpingInstance:
    if isinstance(task, JumpingInstance):
        return task
    position, height = task
    return JumpingInstance(int(position), int(height), color=color)


def observe(instance: JumpingInstance, states, factor: int = 2) -> np.ndarray:
    """Flattened, block-averaged frames for a list of states."""
    return np.stack([downsample(render(instance, s), factor).ravel() for s in states])


@dataclass
class TaskData:
    instance: JumpingInstance
    states: tuple
    actions: np.ndarray
    observations: np.ndarray


@lru_cache(maxsize=None)
def _trajectory(instance: JumpingInstance):
    mdp, _ = jumping_build(instance)
    policy, _ = jumping_optimal_policy(instance)
    return rollout(mdp, policy, instance.start_state, 4 * instance.goal_x, include_terminal=False)


@lru_cache(maxsize=None)
def _pi_bisim_distances(instance: JumpingInstance) -> tuple:
    """Restricted MDP and policy on the optimal policy's reachable closure."""
    mdp, _ = jumping_build(instance)
    policy, _ = jumping_optimal_policy(instance)
    closure = reachable_states(mdp, policy, [instance.start_state])
    return restrict(mdp, policy, closure)


@lru_cache(maxsize=None)
def trajectory_metric(kind: str, inst_x: JumpingInstance, inst_y: JumpingInstance) -> np.ndarray:
    """Metric between the optimal-trajectory states of two tasks (rows ``x``, columns ``y``)."""
    tx, ty = _trajectory(inst_x), _trajectory(inst_y)
    if kind == "psm":
        return psm_trajectory_dp(tx, ty, "tv", GAMMA).values
    if kind == "pi_bisim":
        sub_x, pol_x, keep_x = _pi_bisim_distances(inst_x)
        sub_y, pol_y, keep_y = _pi_bisim_distances(inst_y)
        table = pi_bisimulation(sub_x, pol_x, sub_y, pol_y, method="exact").values
        rows = [keep_x.index(s) for s in tx.states]
        cols = [keep_y.index(s) for s in ty.states]
        return table[np.ix_(rows, cols)]
    raise ValueError(f"unknown metric kind {kind!r}")


def task_data(instance: JumpingInstance, factor: int = 2, augment=None) -> TaskData:
    traj = _trajectory(instance)
    obs = observe(instance, traj.states, factor)
    if augment is not None:
        obs = np.stack([augment(o) for o in obs])
    return TaskData(instance, traj.states, np.argmax(traj.action_dists, axis=1), obs)


def solve_grid(model: EmbeddingModel, instances, factor: int = 2) -> np.ndarray:
    """Whether the greedy policy of ``model`` reaches the edge on each instance.

    Decisions only matter on the ground, so one batch of ground-state frames
    per task fixes the whole action sequence.
    """
    solved = []
    for inst in instances:
        ground = [inst.state_index(x, 0) for x in range(inst.goal_x)]
        _, _, logits = model.forward(observe(inst, ground, factor))
        actions = np.argmax(logits, axis=1)
        solved.append(simulate(inst, actions)["outcome"] == "success")
    return np.array(solved, bool)


class JumpingAgent(BaseEstimator):
    """Pixel policy trained by imitation plus ``alpha`` times an embedding loss.

    ``method`` selects the auxiliary term: none, the soft contrastive loss on
    the policy similarity metric (``"pse"``) or on pi*-bisimulation
    (``"cme_pi_bisim"``), or the l2 metric-matching loss on either metric.
    """

    def __init__(
        self,
        method="pse",
        alpha=5.0,
        lam=1.0,
        beta=0.01,
        k=64,
        widths=(256, 256),
        lr=0.1,
        lr_decay=0.999,
        epochs=300,
        batch_size=256,
        downsample=2,
        color="white",
        eval_every=0,
        augment=None,
        seed=0,
    ):
        self.method = method
        self.alpha = alpha
        self.lam = lam
        self.beta = beta
        self.k = k
        self.widths = widths
        self.lr = lr
        self.lr_decay = lr_decay
        self.epochs = epochs
        self.batch_size = batch_size
        self.downsample = downsample
        self.color = color
        self.eval_every = eval_every
        self.augment = augment
        self.seed = seed

    def _aux(self, model, a: TaskData, b: TaskData):
        """Auxiliary loss and parameter gradients for the ordered task pair ``(a, b)``."""
        metric = "psm" if self.method in ("pse", "l2_psm") else "pi_bisim"
        dist = trajectory_metric(metric, a.instance, b.instance)
        _, z_x, _, cache_x = model.forward(a.observations, keep_cache=True)
        _, z_y, _, cache_y = model.forward(b.observations, keep_cache=True)
        if self.method in ("pse", "cme_pi_bisim"):
            loss, d_zx, d_zy = cme_total_loss_grad(z_x, z_y, dist, self.beta, self.lam)
        else:
            loss, d_zx, d_zy = l2_metric_loss_grad(z_x, z_y, dist)
        gx = model.backward(cache_x, d_z=d_zx)
        gy = model.backward(cache_y, d_z=d_zy)
        return loss, {name: gx[name] + gy[name] for name in gx}

    def objective(self, model, batch_obs, batch_actions, pair):
        """Total loss ``IL + alpha * aux`` and its gradients for one step."""
        _, _, logits, cache = model.forward(batch_obs, keep_cache=True)
        il, d_logits = imitation_loss_grad(logits, batch_actions)
        grads = model.backward(cache, d_logits=d_logits)
        aux = 0.0
        if self.method != "imitation_only" and self.alpha > 0 and pair is not None:
            aux, aux_grads = self._aux(model, *pair)
            for name in grads:
                grads[name] += self.alpha * aux_grads[name]
        return il + self.alpha * aux, il, aux, grads

    def fit(self, tasks, y=None, eval_tasks=None):
        if self.method not in AGENT_METHODS:
            raise ValueError(f"unknown method {self.method!r}; expected one of {AGENT_METHODS}")
        instances = [as_instance(t, self.color) for t in tasks]
        if len(instances) < 2 and self.method != "imitation_only":
            raise ValueError("auxiliary losses need at least two training tasks")
        data = [task_data(inst, self.downsample, self.augment) for inst in instances]
        obs = np.vstack([d.observations for d in data])
        actions = np.concatenate([d.actions for d in data])
        eval_instances = [as_instance(t, self.color) for t in eval_tasks] if eval_tasks is not None else None

        rng = np.random.default_rng(self.seed)
        model = EmbeddingModel(obs.shape[1], self.widths, self.k, 2, seed=int(rng.integers(2**31)))
        lr = self.lr
        log = []
        step = 0
        for epoch in range(1, self.epochs + 1):
            order = rng.permutation(len(obs))
            totals, auxes = [], []
            for start in range(0, len(order), self.batch_size):
                idx = order[start : start + self.batch_size]
                i, j = rng.choice(len(data), size=2, replace=False)
                total, _, aux, grads = self.objective(model, obs[idx], actions[idx], (data[i], data[j]))
                if not np.isfinite(total):
                    raise FloatingPointError(f"loss became non-finite at step {step} (epoch {epoch})")
                model.step(grads, lr)
                totals.append(total)
                auxes.append(aux)
                step += 1
            lr *= self.lr_decay
            row = {"epoch": epoch, "train_loss": float(np.mean(totals)), "aux_loss": float(np.mean(auxes))}
            due = self.eval_every and (epoch % self.eval_every == 0 or epoch == self.epochs)
            row["test_solve_pct"] = (
                100.0 * float(np.mean(solve_grid(model, eval_instances, self.downsample)))
                if due and eval_instances
                else None
            )
            log.append(row)
        self.model_ = model
        self.log_ = log
        self.n_features_in_ = obs.shape[1]
        return self

    def predict_proba(self, observations):
        check_is_fitted(self, "model_")
        _, _, logits = self.model_.forward(observations)
        e = np.exp(logits - logits.max(axis=1, keepdims=True))
        return e / e.sum(axis=1, keepdims=True)

    def predict(self, observations):
        check_is_fitted(self, "model_")
        return np.argmax(self.model_.forward(observations)[2], axis=1)

    def transform(self, observations):
        """Embeddings ``z`` for flat observations."""
        check_is_fitted(self, "model_")
        return self.model_.forward(observations)[1]

    def solved(self, tasks) -> np.ndarray:
        check_is_fitted(self, "model_")
        return solve_grid(self.model_, [as_instance(t, self.color) for t in tasks], self.downsample)

    def score(self, tasks, y=None) -> float:
        """Fraction of ``tasks`` the greedy policy solves."""
        return float(np.mean(self.solved(tasks)))

    def log_csv(self) -> str:
        check_is_fitted(self, "log_")
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(LOG_FIELDS)
        for row in self.log_:
            writer.writerow(["" if row[f] is None else repr(row[f]) for f in LOG_FIELDS])
        return buf.getvalue()


def train_jumping(split, config: dict, method: str):
    """Fit a ``JumpingAgent`` on a split's training tasks; returns ``(model, log)``."""
    agent = JumpingAgent(method=method, **config)
    agent.fit(split.training_tasks, eval_tasks=split.test_tasks)
    return agent.model_, agent.log_


def optimal_actions_for(instance: JumpingInstance) -> list:
    """Ground-truth action per ground column, used by tests and diagnostics."""
    _, column = jumping_optimal_policy(instance)
    return [RIGHT if x != column else 1 for x in range(instance.goal_x)]
