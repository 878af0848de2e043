"""Behavioural state metrics between two finite MDPs.

Every metric here is the fixed point of an operator of the form

    F(d)(x, y) = local(x, y) + gamma * W1(d)(P(. | x), P(. | y))

(or a max over actions of such terms, for bisimulation). Two solvers are
available: Jacobi fixed-point sweeps from the all-zeros table, which is what
the residual history and contraction checks are about, and ``"exact"``, which
alternates a sparse linear solve for fixed couplings with a coupling
improvement step (policy iteration on the coupling MDP). The exact solver
terminates in a handful of rounds and is accurate to linear-solve precision.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import spsolve

from .mdp import ConvergenceError, TabularMdp, Trajectory, check_policy, log_iteration_cap
from .transport import WarmTransport

METRIC_KINDS = ("bisimulation", "pi_bisimulation", "psm", "generalized_psm")
DIST_KINDS = ("tv", "l1_mean_action")
DEFAULT_TOL = 1e-9


def tv_distance(p, q) -> float:
    p = np.asarray(p, float)
    q = np.asarray(q, float)
    if p.shape != q.shape:
        raise ValueError(f"length mismatch: {p.shape} vs {q.shape}")
    return 0.5 * float(np.abs(p - q).sum())


def gaussian_kernel(d, beta: float):
    """Similarity ``exp(-d / beta)``; works elementwise on arrays."""
    if beta <= 0:
        raise ValueError(f"beta must be positive, got {beta}")
    d = np.asarray(d, float)
    if np.any(d < 0):
        raise ValueError("distances must be nonnegative")
    out = np.exp(-d / beta)
    return float(out) if out.ndim == 0 else out


def action_distance(rows_x, rows_y, dist_kind: str = "tv") -> np.ndarray:
    """Pairwise ``Dist`` between two stacks of action rows.

    For ``"tv"`` the rows are action distributions; for ``"l1_mean_action"``
    they are mean-action vectors compared in the l1 norm.
    """
    rows_x = np.atleast_2d(np.asarray(rows_x, float))
    rows_y = np.atleast_2d(np.asarray(rows_y, float))
    if rows_x.shape[1] != rows_y.shape[1]:
        raise ValueError("action dimensions differ")
    diff = np.abs(rows_x[:, None, :] - rows_y[None, :, :]).sum(axis=2)
    if dist_kind == "tv":
        return 0.5 * diff
    if dist_kind == "l1_mean_action":
        return diff
    raise ValueError(f"unknown dist_kind {dist_kind!r}; expected one of {DIST_KINDS}")


@dataclass
class PairwiseMetricTable:
    """Dense distances between the states of two MDPs plus provenance."""

    values: np.ndarray
    metric_kind: str
    gamma: float
    dist_kind: str = "tv"
    tol: float = DEFAULT_TOL
    iterations: int = 0
    rows: list = None
    cols: list = None
    method: str = "fixed_point"
    residuals: list = field(default_factory=list, repr=False)

    def __post_init__(self):
        self.values = np.asarray(self.values, float)
        if self.rows is None:
            self.rows = list(range(self.values.shape[0]))
        if self.cols is None:
            self.cols = list(range(self.values.shape[1]))

    @property
    def shape(self):
        return self.values.shape

    def __getitem__(self, key):
        return self.values[key]

    def contraction_ratios(self) -> np.ndarray:
        """Successive residual ratios, skipping the first iteration and exact zeros."""
        r = np.asarray(self.residuals, float)
        if len(r) < 3:
            return np.zeros(0)
        prev, cur = r[1:-1], r[2:]
        keep = prev > 0
        return cur[keep] / prev[keep]

    def metadata(self) -> dict:
        return {
            "metric_kind": self.metric_kind,
            "gamma": self.gamma,
            "dist_kind": self.dist_kind,
            "tol": self.tol,
            "iterations": self.iterations,
            "method": self.method,
            "rows": [str(r) for r in self.rows],
            "cols": [str(c) for c in self.cols],
        }

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["state"] + [str(c) for c in self.cols])
        for r, row in zip(self.rows, self.values):
            writer.writerow([str(r)] + [repr(float(v)) for v in row])
        return buf.getvalue()

    def to_json(self) -> str:
        doc = self.metadata()
        doc["values"] = self.values.tolist()
        doc["residuals"] = [float(r) for r in self.residuals]
        return json.dumps(doc)

    @classmethod
    def from_json(cls, text: str) -> "PairwiseMetricTable":
        doc = json.loads(text)
        return cls(
            values=np.asarray(doc["values"], float),
            metric_kind=doc["metric_kind"],
            gamma=doc["gamma"],
            dist_kind=doc["dist_kind"],
            tol=doc["tol"],
            iterations=doc["iterations"],
            rows=doc["rows"],
            cols=doc["cols"],
            method=doc.get("method", "fixed_point"),
            residuals=doc.get("residuals", []),
        )

    @classmethod
    def from_csv(cls, text: str, **meta) -> "PairwiseMetricTable":
        lines = list(csv.reader(io.StringIO(text)))
        cols = lines[0][1:]
        rows = [line[0] for line in lines[1:]]
        values = np.array([[float(v) for v in line[1:]] for line in lines[1:]])
        meta.setdefault("metric_kind", "psm")
        meta.setdefault("gamma", float("nan"))
        return cls(values=values, rows=rows, cols=cols, **meta)


class TransportTerm:
    """``W1(d)(P_X(. | x), P_Y(. | y))`` for every cell, for a changing ``d``.

    Rows that are point masses are handled in closed form (the coupling is
    forced); only cells where both rows are spread out call the simplex, each
    with its own warm-started basis.
    """

    def __init__(self, p_x: np.ndarray, p_y: np.ndarray):
        self.p_x = np.asarray(p_x, float)
        self.p_y = np.asarray(p_y, float)
        self.n_x, self.n_y = self.p_x.shape[0], self.p_y.shape[0]
        self.det_x = (self.p_x > 0).sum(axis=1) == 1
        self.det_y = (self.p_y > 0).sum(axis=1) == 1
        self.next_x = np.argmax(self.p_x, axis=1)
        self.next_y = np.argmax(self.p_y, axis=1)
        self.supp_x = [np.flatnonzero(row > 0) for row in self.p_x]
        self.supp_y = [np.flatnonzero(row > 0) for row in self.p_y]
        self.solvers = {}
        for x in np.flatnonzero(~self.det_x):
            for y in np.flatnonzero(~self.det_y):
                sx, sy = self.supp_x[x], self.supp_y[y]
                self.solvers[(int(x), int(y))] = WarmTransport(self.p_x[x, sx], self.p_y[y, sy])

    def apply(self, d: np.ndarray) -> np.ndarray:
        out = np.empty((self.n_x, self.n_y))
        if self.det_x.any():
            # Point mass at i: all mass of P_Y(.|y) ships from i.
            along_y = d @ self.p_y.T
            out[self.det_x] = along_y[self.next_x[self.det_x]]
        if self.det_y.any():
            along_x = self.p_x @ d
            out[:, self.det_y] = along_x[:, self.next_y[self.det_y]]
        for (x, y), solver in self.solvers.items():
            out[x, y] = solver.solve(d[np.ix_(self.supp_x[x], self.supp_y[y])])
        return out

    def coupling_matrix(self, flows: dict) -> sparse.csr_matrix:
        """Sparse map ``d -> sum(coupling * d)`` per cell, for fixed couplings."""
        n_y = self.n_y
        rows, cols, vals = [], [], []
        for x in range(self.n_x):
            for y in range(n_y):
                cell = x * n_y + y
                if self.det_x[x]:
                    j = self.supp_y[y]
                    rows.extend([cell] * len(j))
                    cols.extend(self.next_x[x] * n_y + j)
                    vals.extend(self.p_y[y, j])
                elif self.det_y[y]:
                    i = self.supp_x[x]
                    rows.extend([cell] * len(i))
                    cols.extend(i * n_y + self.next_y[y])
                    vals.extend(self.p_x[x, i])
                else:
                    flow = flows[(x, y)]
                    ii, jj = np.nonzero(flow)
                    rows.extend([cell] * len(ii))
                    cols.extend(self.supp_x[x][ii] * n_y + self.supp_y[y][jj])
                    vals.extend(flow[ii, jj])
        size = self.n_x * n_y
        return sparse.csr_matrix((vals, (rows, cols)), shape=(size, size))


def _jacobi(operator, shape, gamma, tol, init=None, max_iter=None):
    d = np.zeros(shape) if init is None else np.array(init, float)
    cap = max_iter or log_iteration_cap(tol, gamma)
    residuals = []
    for _ in range(cap):
        new = operator(d)
        residual = float(np.max(np.abs(new - d), initial=0.0))
        residuals.append(residual)
        d = new
        if residual <= tol:
            return d, residuals
    raise ConvergenceError("metric fixed point did not converge", residuals[-1], cap)


def _exact(local, term: TransportTerm, gamma, tol, max_rounds=200):
    """Policy iteration over couplings for ``d = local + gamma * W1(d)``."""
    n = local.size
    eye = sparse.identity(n, format="csr")
    # Start from the couplings that are optimal for the local cost.
    term.apply(local)
    flows = {cell: solver.flow.copy() for cell, solver in term.solvers.items()}
    history = []
    d = np.zeros_like(local)
    for _ in range(max_rounds):
        m = term.coupling_matrix(flows)
        new = spsolve((eye - gamma * m).tocsc(), local.ravel()).reshape(local.shape)
        history.append(float(np.max(np.abs(new - d))))
        d = new
        improved = False
        for cell, solver in term.solvers.items():
            x, y = cell
            sub = d[np.ix_(term.supp_x[x], term.supp_y[y])]
            current = float(np.sum(flows[cell] * sub))
            best = solver.solve(sub)
            if best < current - 1e-12 * (1.0 + abs(current)):
                flows[cell] = solver.flow.copy()
                improved = True
        if not improved:
            break
    else:
        raise ConvergenceError("coupling iteration did not stabilise", history[-1], max_rounds)
    d = np.maximum(d, 0.0)
    residual = float(np.max(np.abs(local + gamma * term.apply(d) - d)))
    if residual > tol:
        raise ConvergenceError("exact metric solve failed its residual check", residual, len(history))
    return d, history


def _policy_metric(local, p_x, p_y, gamma, tol, method, init):
    term = TransportTerm(p_x, p_y)
    if method == "fixed_point":
        return _jacobi(lambda d: local + gamma * term.apply(d), local.shape, gamma, tol, init)
    if method == "exact":
        return _exact(local, term, gamma, tol)
    raise ValueError(f"unknown method {method!r}; expected 'fixed_point' or 'exact'")


def _check_pair(mdp_x: TabularMdp, mdp_y: TabularMdp, tol: float):
    if mdp_x.n_actions != mdp_y.n_actions:
        raise ValueError(f"action counts differ ({mdp_x.n_actions} vs {mdp_y.n_actions})")
    if mdp_x.gamma != mdp_y.gamma:
        raise ValueError(f"discount factors differ ({mdp_x.gamma} vs {mdp_y.gamma})")
    if tol <= 0:
        raise ValueError("tol must be positive")


def _policy_rows(policy, dist_kind, action_values):
    if dist_kind == "l1_mean_action":
        if action_values is None:
            raise ValueError("dist_kind='l1_mean_action' needs action_values (n_actions x action_dim)")
        return policy @ np.asarray(action_values, float).reshape(policy.shape[1], -1)
    return policy


def generalized_psm(
    mdp_x: TabularMdp,
    pi_1,
    mdp_y: TabularMdp,
    pi_2,
    dist_kind: str = "tv",
    tol: float = DEFAULT_TOL,
    method: str = "fixed_point",
    init=None,
    action_values=None,
    metric_kind: str = "generalized_psm",
) -> PairwiseMetricTable:
    """Policy similarity between ``(x, pi_1)`` and ``(y, pi_2)`` for arbitrary policies."""
    _check_pair(mdp_x, mdp_y, tol)
    pi_1 = check_policy(mdp_x, pi_1)
    pi_2 = check_policy(mdp_y, pi_2)
    local = action_distance(
        _policy_rows(pi_1, dist_kind, action_values), _policy_rows(pi_2, dist_kind, action_values), dist_kind
    )
    d, residuals = _policy_metric(
        local, mdp_x.policy_transition(pi_1), mdp_y.policy_transition(pi_2), mdp_x.gamma, tol, method, init
    )
    return PairwiseMetricTable(
        values=d,
        metric_kind=metric_kind,
        gamma=mdp_x.gamma,
        dist_kind=dist_kind,
        tol=tol,
        iterations=len(residuals),
        method=method,
        residuals=residuals,
    )


def psm_exact(mdp_x, pi_x, mdp_y, pi_y, dist_kind="tv", tol=DEFAULT_TOL, method="fixed_point", init=None,
              action_values=None) -> PairwiseMetricTable:
    """Policy similarity metric grounded in the (optimal) policies ``pi_x``, ``pi_y``."""
    return generalized_psm(mdp_x, pi_x, mdp_y, pi_y, dist_kind, tol, method, init, action_values, metric_kind="psm")


def pi_bisimulation(mdp_x, pi_x, mdp_y, pi_y, tol=DEFAULT_TOL, method="fixed_point", init=None) -> PairwiseMetricTable:
    """On-policy bisimulation: reward gap under the policies plus discounted ``W1``."""
    _check_pair(mdp_x, mdp_y, tol)
    pi_x = check_policy(mdp_x, pi_x)
    pi_y = check_policy(mdp_y, pi_y)
    local = np.abs(mdp_x.policy_reward(pi_x)[:, None] - mdp_y.policy_reward(pi_y)[None, :])
    d, residuals = _policy_metric(
        local, mdp_x.policy_transition(pi_x), mdp_y.policy_transition(pi_y), mdp_x.gamma, tol, method, init
    )
    return PairwiseMetricTable(
        values=d,
        metric_kind="pi_bisimulation",
        gamma=mdp_x.gamma,
        dist_kind="tv",
        tol=tol,
        iterations=len(residuals),
        method=method,
        residuals=residuals,
    )


def bisimulation(mdp_x, mdp_y, tol=DEFAULT_TOL, init=None) -> PairwiseMetricTable:
    """Bisimulation metric: worst case over actions of reward gap plus discounted ``W1``."""
    _check_pair(mdp_x, mdp_y, tol)
    gamma = mdp_x.gamma
    terms, locals_ = [], []
    for a in range(mdp_x.n_actions):
        terms.append(TransportTerm(mdp_x.transition[:, a, :], mdp_y.transition[:, a, :]))
        locals_.append(np.abs(mdp_x.reward[:, a][:, None] - mdp_y.reward[:, a][None, :]))

    def operator(d):
        return np.max([loc + gamma * term.apply(d) for loc, term in zip(locals_, terms)], axis=0)

    d, residuals = _jacobi(operator, (mdp_x.n_states, mdp_y.n_states), gamma, tol, init)
    return PairwiseMetricTable(
        values=d,
        metric_kind="bisimulation",
        gamma=gamma,
        dist_kind="tv",
        tol=tol,
        iterations=len(residuals),
        residuals=residuals,
    )


def psm_trajectory_dp(
    traj_x: Trajectory,
    traj_y: Trajectory,
    dist_kind: str = "tv",
    gamma: float = 0.99,
    tol: float = DEFAULT_TOL,
    init=None,
) -> PairwiseMetricTable:
    """PSM between two deterministic trajectories by dynamic programming.

    ``d[i, j] = Dist(a_i, a_j) + gamma * d[i + 1, j + 1]`` with both next
    indices clamped at the final position, so the last state of each
    trajectory repeats its stored action row forever.
    """
    if len(traj_x) == 0 or len(traj_y) == 0:
        raise ValueError("trajectories must be nonempty")
    if not 0.0 <= gamma < 1.0:
        raise ValueError("gamma must lie in [0, 1)")
    local = action_distance(traj_x.action_dists, traj_y.action_dists, dist_kind)
    n, m = local.shape
    nxt_i = np.minimum(np.arange(n) + 1, n - 1)
    nxt_j = np.minimum(np.arange(m) + 1, m - 1)
    d, residuals = _jacobi(lambda d: local + gamma * d[np.ix_(nxt_i, nxt_j)], local.shape, gamma, tol, init)
    return PairwiseMetricTable(
        values=d,
        metric_kind="psm",
        gamma=gamma,
        dist_kind=dist_kind,
        tol=tol,
        iterations=len(residuals),
        rows=list(traj_x.states),
        cols=list(traj_y.states),
        residuals=residuals,
    )


def contraction_ok(table: PairwiseMetricTable, slack: float = 1e-9) -> bool:
    """Whether every post-first residual ratio is at most ``gamma + slack``.

    Ratios are only meaningful while the residual is above the floating-point
    resolution of the table; see ``roundoff_floor``.
    """
    r = np.asarray(table.residuals, float)
    floor = roundoff_floor(table)
    for prev, cur in zip(r[1:-1], r[2:]):
        if cur > (table.gamma + slack) * prev + floor:
            return False
    return True


def roundoff_floor(table: PairwiseMetricTable) -> float:
    """Absolute rounding noise of one operator application on this table."""
    scale = max(1.0, float(np.max(np.abs(table.values), initial=0.0)))
    n_terms = max(table.values.shape) + 2
    return 4.0 * n_terms * np.finfo(float).eps * scale * (1.0 + table.gamma)


def bound_for_tv(gamma: float) -> float:
    return 1.0 / (1.0 - gamma) if gamma < 1 else math.inf
