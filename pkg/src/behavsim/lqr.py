"""Riccati oracle, truncated LQR cost with its gradient, and two-layer linear policies.

Policies act on observations: ``a = K o`` with ``K = K2 @ K1``. Since
``o = C s`` the closed loop is ``A + B K C``, so costs are computed exactly in
state space by propagating the second-moment matrix of the initial batch.
"""

from __future__ import annotations

import json

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .envs.lqr import LqrSystem, random_orthonormal
from .mdp import ConvergenceError

HORIZON = 200
N_INIT = 100
METHODS = ("overparam", "l1_sparse", "psm_aggregation")


def dare_residual(P, A, B, Q, R) -> float:
    """Frobenius norm of the Riccati equation residual at ``P``."""
    BtP = B.T @ P
    rhs = Q + A.T @ P @ A - A.T @ P @ B @ np.linalg.solve(R + BtP @ B, BtP @ A)
    return float(np.linalg.norm(rhs - P))


def dare_solve(A, B, Q, R, tol: float = 1e-10, max_iter: int = 10_000) -> np.ndarray:
    """Discrete algebraic Riccati solution by fixed-point iteration from ``P = Q``."""
    A, B, Q, R = (np.atleast_2d(np.asarray(m, float)) for m in (A, B, Q, R))
    P = Q.copy()
    for _ in range(max_iter):
        BtP = B.T @ P
        nxt = Q + A.T @ P @ A - A.T @ P @ B @ np.linalg.solve(R + BtP @ B, BtP @ A)
        nxt = 0.5 * (nxt + nxt.T)
        if np.linalg.norm(nxt - P) <= 0.1 * tol and dare_residual(nxt, A, B, Q, R) <= tol:
            return nxt
        P = nxt
    raise ConvergenceError("Riccati iteration did not converge", dare_residual(P, A, B, Q, R), max_iter)


def oracle_gain(system: LqrSystem) -> np.ndarray:
    """Optimal state feedback ``a = K s``."""
    P = dare_solve(system.A, system.B, system.Q, system.R)
    B = system.B
    return -np.linalg.solve(system.R + B.T @ P @ B, B.T @ P @ system.A)


def generalizing_policy(system: LqrSystem) -> np.ndarray:
    """Observation policy that reads only the invariant block: ``[10 K W_c^T, 0]``."""
    K = oracle_gain(system)
    return np.hstack([10.0 * K @ system.W_c.T, np.zeros((system.n_a, system.n_d))])


def init_batch(n_s: int, size: int = N_INIT, seed: int = 0) -> np.ndarray:
    """Initial states as columns, drawn from a standard normal."""
    return np.random.default_rng(seed).standard_normal((n_s, size))


def _second_moment(states: np.ndarray) -> np.ndarray:
    return states @ states.T / states.shape[1]


def state_feedback_cost(system: LqrSystem, Kc, horizon=HORIZON, init_states=None, grad=False):
    """Cost of ``a = Kc s`` averaged over the batch; optionally d cost / d Kc.

    Returns ``(cost, spectral_radius)`` or ``(cost, spectral_radius, grad)``.
    An unstable loop whose moments overflow costs ``+inf``.
    """
    A, B, Q, R = system.A, system.B, system.Q, system.R
    S0 = _second_moment(init_batch(system.n_s) if init_states is None else init_states)
    A_cl = A + B @ Kc
    rho = float(np.max(np.abs(np.linalg.eigvals(A_cl))))
    M = Q + Kc.T @ R @ Kc
    X, total = S0, np.zeros_like(S0)
    pushed = []  # A_cl X_t, reused by the backward pass
    with np.errstate(over="ignore", invalid="ignore"):
        for _ in range(horizon):
            total += X
            Z = A_cl @ X
            pushed.append(Z)
            X = Z @ A_cl.T
        cost = 0.5 * float(np.sum(M * total))
        if not np.isfinite(cost):
            return (np.inf, rho, None) if grad else (np.inf, rho)
        if not grad:
            return cost, rho
        # d cost / d Kc = sum_t (R Kc + B^T V_{t+1} A_cl) X_t, V the cost-to-go.
        cross = np.zeros_like(A)
        V = np.zeros_like(A)
        for Z in reversed(pushed):
            cross += V @ Z
            V = M + A_cl.T @ V @ A_cl
        g = R @ Kc @ total + B.T @ cross
    return cost, rho, g


def lqr_cost(system: LqrSystem, K, horizon: int = HORIZON, init_states=None):
    """Truncated cost of the observation policy ``K`` and the closed-loop spectral radius."""
    return state_feedback_cost(system, np.asarray(K) @ system.C, horizon, init_states)


def lqr_cost_grad(system: LqrSystem, K, horizon: int = HORIZON, init_states=None):
    """Cost and its gradient with respect to the observation policy ``K``."""
    C = system.C
    cost, _, g = state_feedback_cost(system, np.asarray(K) @ C, horizon, init_states, grad=True)
    return cost, (None if g is None else g @ C.T)


def oracle_cost(system: LqrSystem, horizon: int = HORIZON, init_states=None) -> float:
    return state_feedback_cost(system, oracle_gain(system), horizon, init_states)[0]


def evaluate_generalization(K, test_envs, horizon: int = HORIZON, init_states=None):
    """Mean and per-environment ``|cost(K) - cost(oracle)|`` over ``test_envs``."""
    errors = []
    for env in test_envs:
        errors.append(abs(lqr_cost(env, K, horizon, init_states)[0] - oracle_cost(env, horizon, init_states)))
    return float(np.mean(errors)), errors


def _orthogonal_init(rng, rows, cols, scale):
    if rows >= cols:
        return scale * random_orthonormal(rng, rows, cols)
    return scale * random_orthonormal(rng, cols, rows).T


class LinearLqrPolicy(BaseEstimator):
    """Two-layer linear observation policy ``K = K2 @ K1`` trained by gradient descent.

    ``method`` picks the regulariser: none (``"overparam"``), an l1 penalty on
    ``K`` (``"l1_sparse"``) or matching hidden representations of observation
    pairs that share the same underlying state (``"psm_aggregation"``).
    """

    def __init__(
        self,
        method="overparam",
        hidden=200,
        lr=2e-2,
        n_iter=600,
        l1=1e-3,
        psm_weight=10.0,
        n_pairs=256,
        init_scale=1e-3,
        horizon=HORIZON,
        seed=0,
    ):
        self.method = method
        self.hidden = hidden
        self.lr = lr
        self.n_iter = n_iter
        self.l1 = l1
        self.psm_weight = psm_weight
        self.n_pairs = n_pairs
        self.init_scale = init_scale
        self.horizon = horizon
        self.seed = seed

    def _objective(self, envs, K1, K2, rng):
        K = K2 @ K1
        total, G = 0.0, np.zeros_like(K)
        for env in envs:
            cost, g = lqr_cost_grad(env, K, self.horizon)
            if g is None:
                return np.inf, None, None, 0.0
            total += cost / len(envs)
            G += g / len(envs)
        aux = 0.0
        if self.method == "l1_sparse":
            aux = self.l1 * float(np.abs(K).sum())
            G = G + self.l1 * np.sign(K)
        dK2 = G @ K1.T
        dK1 = K2.T @ G
        if self.method == "psm_aggregation":
            # o_x - o_y = [0; (W_dx - W_dy) s], so the pair loss only sees K1's distractor block.
            states = rng.standard_normal((envs[0].n_s, self.n_pairs))
            n_s = envs[0].n_s
            gap = envs[0].W_d - envs[1].W_d
            D = K1[:, n_s:] @ gap
            hidden = D @ states
            aux = self.psm_weight * float(np.sum(hidden**2)) / self.n_pairs
            dK1 = dK1.copy()
            dK1[:, n_s:] += self.psm_weight * 2.0 * (D @ _second_moment(states)) @ gap.T
        return total, dK1, dK2, aux

    def fit(self, train_envs, y=None):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; expected one of {METHODS}")
        if len(train_envs) != 2:
            raise ValueError("training uses exactly two environments")
        rng = np.random.default_rng(self.seed)
        n_obs, n_a = train_envs[0].n_obs, train_envs[0].n_a
        K1 = _orthogonal_init(rng, self.hidden, n_obs, self.init_scale)
        K2 = _orthogonal_init(rng, n_a, self.hidden, self.init_scale)
        history = []
        for step in range(self.n_iter):
            cost, dK1, dK2, aux = self._objective(train_envs, K1, K2, rng)
            if dK1 is None or not np.isfinite(cost):
                raise FloatingPointError(f"training diverged at step {step} (cost={cost})")
            history.append((cost, aux))
            K1 = K1 - self.lr * dK1
            K2 = K2 - self.lr * dK2
        self.K1_, self.K2_ = K1, K2
        self.history_ = np.array(history)
        return self

    @property
    def K_(self) -> np.ndarray:
        check_is_fitted(self, ["K1_", "K2_"])
        return self.K2_ @ self.K1_

    def predict(self, observations):
        """Actions for observations stored as rows."""
        return np.asarray(observations) @ self.K_.T

    def transform(self, observations):
        """Hidden representations ``K1 o`` for observations stored as rows."""
        check_is_fitted(self, ["K1_"])
        return np.asarray(observations) @ self.K1_.T

    def score(self, test_envs, y=None):
        """Negative mean absolute cost error against the oracle."""
        return -evaluate_generalization(self.K_, test_envs, self.horizon)[0]

    def to_json(self) -> str:
        check_is_fitted(self, ["K1_", "K2_"])
        return json.dumps({"params": self.get_params(), "K1": self.K1_.tolist(), "K2": self.K2_.tolist()})
