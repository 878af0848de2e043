"""Exact discrete Wasserstein-1 via the transportation simplex.

The solver keeps a spanning-tree basis of ``m + n - 1`` cells, prices it with
row/column potentials and pivots on the most negative reduced cost (lowest
index on ties). Optimality is certified by the returned dual potentials.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass

import numpy as np

MASS_TOL = 1e-9
PRICE_TOL = 1e-12


@dataclass(frozen=True)
class CouplingCertificate:
    """Optimal transport value with its primal coupling and dual potentials.

    Duals follow ``u[i] - v[j] <= cost[i, j]`` and the dual objective is
    ``p @ u - q @ v``.
    """

    value: float
    coupling: np.ndarray
    u: np.ndarray
    v: np.ndarray

    @property
    def potentials(self):
        return self.u, self.v

    def dual_value(self, p, q) -> float:
        return float(np.dot(p, self.u) - np.dot(q, self.v))

    def check(self, cost, p, q, tol: float = 1e-10) -> dict:
        """Marginal error, worst dual violation and duality gap."""
        cost = np.asarray(cost, float)
        marg = max(
            float(np.max(np.abs(self.coupling.sum(axis=1) - p))),
            float(np.max(np.abs(self.coupling.sum(axis=0) - q))),
        )
        dual_violation = float(np.max(self.u[:, None] - self.v[None, :] - cost))
        gap = abs(self.value - self.dual_value(p, q))
        return {
            "marginal_error": marg,
            "dual_violation": dual_violation,
            "duality_gap": gap,
            "ok": marg <= tol and dual_violation <= tol and gap <= 1e-9 and float(self.coupling.min()) >= 0.0,
        }

    def to_dict(self) -> dict:
        return {
            "value": self.value,
            "coupling": self.coupling.tolist(),
            "u": self.u.tolist(),
            "v": self.v.tolist(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def _northwest_corner(p, q):
    m, n = len(p), len(q)
    supply, demand = p.copy(), q.copy()
    flow = np.zeros((m, n))
    basis = []
    i = j = 0
    while i < m and j < n:
        if i == m - 1:
            # Last row absorbs whatever demand is left, keeping the basis a tree.
            for jj in range(j, n):
                flow[i, jj] = max(demand[jj], 0.0)
                basis.append((i, jj))
            break
        if j == n - 1:
            for ii in range(i, m):
                flow[ii, j] = max(supply[ii], 0.0)
                basis.append((ii, j))
            break
        x = min(supply[i], demand[j])
        flow[i, j] = x
        basis.append((i, j))
        supply[i] -= x
        demand[j] -= x
        if supply[i] <= demand[j]:
            i += 1
        else:
            j += 1
    return flow, basis


def _potentials(cost, basis, m, n):
    """Solve ``u_i + w_j = c_ij`` on the basis tree with ``u_0 = 0``."""
    u = np.full(m, np.nan)
    w = np.full(n, np.nan)
    rows = [[] for _ in range(m)]
    cols = [[] for _ in range(n)]
    for i, j in basis:
        rows[i].append(j)
        cols[j].append(i)
    u[0] = 0.0
    queue = deque([("r", 0)])
    while queue:
        kind, k = queue.popleft()
        if kind == "r":
            for j in rows[k]:
                if np.isnan(w[j]):
                    w[j] = cost[k, j] - u[k]
                    queue.append(("c", j))
        else:
            for i in cols[k]:
                if np.isnan(u[i]):
                    u[i] = cost[i, k] - w[k]
                    queue.append(("r", i))
    return u, w


def _tree_path(basis, m, n, start_col, goal_row):
    """Alternating path of basis cells from column ``start_col`` to row ``goal_row``."""
    rows = [[] for _ in range(m)]
    cols = [[] for _ in range(n)]
    for i, j in basis:
        rows[i].append(j)
        cols[j].append(i)
    # Nodes: rows are 0..m-1, columns m..m+n-1.
    parent = {m + start_col: None}
    queue = deque([m + start_col])
    while queue:
        node = queue.popleft()
        if node == goal_row:
            break
        if node < m:
            nbrs = [m + j for j in rows[node]]
        else:
            nbrs = cols[node - m]
        for nb in nbrs:
            if nb not in parent:
                parent[nb] = node
                queue.append(nb)
    cells = []
    node = goal_row
    while parent[node] is not None:
        prev = parent[node]
        cells.append((node, prev - m) if node < m else (prev, node - m))
        node = prev
    cells.reverse()
    return cells


def _simplex(cost, p, q, basis=None, flow=None, max_pivots=10_000):
    """Optimal flow, basis and tree potentials; warm-starts from ``basis``/``flow``."""
    m, n = cost.shape
    if basis is None:
        flow, basis = _northwest_corner(p, q)
    else:
        flow, basis = flow.copy(), list(basis)
    tol = PRICE_TOL * max(1.0, float(np.max(np.abs(cost))))
    degenerate_run = 0
    for _ in range(max_pivots):
        u, w = _potentials(cost, basis, m, n)
        reduced = cost - u[:, None] - w[None, :]
        if degenerate_run > 2 * (m + n):
            # Bland's rule: first improving cell in row-major order cannot cycle.
            candidates = np.flatnonzero(reduced.ravel() < -tol)
            if len(candidates) == 0:
                return flow, basis, u, w
            ei, ej = divmod(int(candidates[0]), n)
        else:
            enter = np.unravel_index(np.argmin(reduced), reduced.shape)
            if reduced[enter] >= -tol:
                return flow, basis, u, w
            ei, ej = int(enter[0]), int(enter[1])
        path = _tree_path(basis, m, n, ej, ei)
        # Path cells alternate -, +, -, ... starting next to the entering column.
        minus = path[0::2]
        plus = path[1::2]
        theta = min(flow[c] for c in minus)
        degenerate_run = degenerate_run + 1 if theta <= 0.0 else 0
        leave = min((c for c in minus if flow[c] <= theta), key=lambda c: (c[0], c[1]))
        for c in minus:
            flow[c] -= theta
        for c in plus:
            flow[c] += theta
        flow[ei, ej] += theta
        flow[leave] = 0.0
        basis.remove(leave)
        basis.append((ei, ej))
    raise RuntimeError("transportation simplex exceeded its pivot budget")


class WarmTransport:
    """Repeated ``W1`` solves for fixed marginals and changing costs.

    The last optimal basis is kept, so re-solving after a small cost change
    usually needs only a pricing pass. Both marginals must have at least two
    atoms; callers handle point masses in closed form.
    """

    def __init__(self, p, q):
        self.p = np.asarray(p, float)
        self.q = np.asarray(q, float)
        self.flow = None
        self.basis = None

    def solve(self, cost) -> float:
        flow, basis, _, _ = _simplex(cost, self.p, self.q, self.basis, self.flow)
        self.flow, self.basis = flow, basis
        return float(np.sum(flow * cost))


def wasserstein1(cost, p, q) -> CouplingCertificate:
    """Exact ``W1`` between ``p`` and ``q`` under ground cost ``cost``.

    Zero-mass entries are dropped before solving and their dual potentials are
    filled in afterwards so that dual feasibility holds on the full grid.
    """
    cost = np.asarray(cost, dtype=float)
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if cost.shape != (len(p), len(q)):
        raise ValueError(f"cost shape {cost.shape} does not match marginals ({len(p)}, {len(q)})")
    if not np.all(np.isfinite(cost)) or np.any(cost < 0.0):
        raise ValueError("costs must be finite and nonnegative")
    if np.any(p < 0.0) or np.any(q < 0.0):
        raise ValueError("marginals must be nonnegative")
    sp, sq = p.sum(), q.sum()
    if sp <= 0.0 or sq <= 0.0:
        raise ValueError("marginals must carry positive mass")
    if abs(sp - sq) > MASS_TOL:
        raise ValueError(f"marginals carry different mass ({sp} vs {sq})")

    rows = np.flatnonzero(p > 0.0)
    cols = np.flatnonzero(q > 0.0)
    sub = cost[np.ix_(rows, cols)]
    if len(rows) == 1 or len(cols) == 1:
        sub_flow = np.outer(p[rows], q[cols]) / (sp if len(rows) == 1 else sq)
        if len(rows) == 1:
            u_sub, w_sub = np.zeros(1), sub[0].copy()
        else:
            u_sub, w_sub = sub[:, 0].copy(), np.zeros(1)
    else:
        sub_flow, _, u_sub, w_sub = _simplex(sub, p[rows], q[cols])

    flow = np.zeros_like(cost)
    flow[np.ix_(rows, cols)] = sub_flow
    u = np.empty(len(p))
    v = np.empty(len(q))
    u[rows] = u_sub
    v[cols] = -w_sub
    empty_rows = np.setdiff1d(np.arange(len(p)), rows)
    empty_cols = np.setdiff1d(np.arange(len(q)), cols)
    if len(empty_rows):
        u[empty_rows] = np.min(cost[np.ix_(empty_rows, cols)] + v[cols][None, :], axis=1)
    if len(empty_cols):
        v[empty_cols] = np.max(u[:, None] - cost[:, empty_cols], axis=0)
    value = float(np.sum(flow * cost))
    return CouplingCertificate(value=value, coupling=flow, u=u, v=v)


def w1_value(cost, p, q) -> float:
    """Optimal transport value alone; skips certificate bookkeeping."""
    return wasserstein1(cost, p, q).value


def w1_cdf_1d(points_p, p, points_q, q) -> float:
    """``W1`` on the real line under ``|x - y|`` as the integral of ``|F_p - F_q|``."""
    xs = np.union1d(points_p, points_q)
    fp = np.array([p[np.asarray(points_p) <= x].sum() for x in xs])
    fq = np.array([q[np.asarray(points_q) <= x].sum() for x in xs])
    return float(np.sum(np.abs(fp - fq)[:-1] * np.diff(xs)))
