"""Nearest-neighbour policy transfer and empirical checks of the metric guarantees.

The checks compute both sides of each inequality exactly (linear fixed points
and the exact metric solver) so a reported violation always means a bug.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from importlib import resources

import numpy as np

from .envs.cake import cake_mdp
from .mdp import TabularMdp, check_policy, discounted_policy_divergence, epsilon_suboptimal, random_mdp, value_iteration
from .metrics import PairwiseMetricTable, bisimulation, generalized_psm, pi_bisimulation, psm_exact

BOUND_TOL = 1e-9
CORPUS_VERSION = 1


def _values(table) -> np.ndarray:
    values = np.asarray(getattr(table, "values", table), float)
    if values.ndim != 2 or values.size == 0:
        raise ValueError("metric table must be a nonempty 2-D array")
    return values


def nearest_neighbor_match(table) -> np.ndarray:
    """For every column ``y`` the row ``x`` minimising ``d(x, y)``, ties to the lowest row."""
    return np.argmin(_values(table), axis=0)


def transfer_policy(pi_x, matching) -> np.ndarray:
    """Policy on ``Y`` copying the source row of each matched state."""
    pi_x = np.asarray(pi_x, float)
    matching = np.asarray(matching)
    if matching.ndim != 1 or matching.size == 0:
        raise ValueError("matching must be a nonempty 1-D array of source states")
    if not np.issubdtype(matching.dtype, np.integer) or np.any(matching < 0) or np.any(matching >= len(pi_x)):
        raise ValueError("matching must map every target state to a valid source state")
    return pi_x[matching].copy()


def transfer_coefficient(gamma: float) -> float:
    return (1.0 + gamma) / (1.0 - gamma)


@dataclass
class TransferReport:
    """Per-state sides of the transfer bound ``LHS(y) <= (1+g)/(1-g) d(x_y, y)``."""

    matched: list
    distance: list
    lhs: list
    rhs: list
    gamma: float
    metric: dict
    tol: float = BOUND_TOL
    slack: list = field(init=False)

    def __post_init__(self):
        self.slack = [r - l for l, r in zip(self.lhs, self.rhs)]

    @property
    def max_violation(self) -> float:
        """Largest ``LHS - RHS``; the bound holds when this is at most ``tol``."""
        return float(-np.min(self.slack))

    @property
    def violations(self) -> list:
        return [y for y, s in enumerate(self.slack) if s < -self.tol]

    @property
    def ok(self) -> bool:
        return not self.violations

    def to_dict(self) -> dict:
        doc = asdict(self)
        doc.update(
            max_violation=self.max_violation,
            n_states=len(self.lhs),
            n_violations=len(self.violations),
            violating_states=self.violations,
            ok=self.ok,
        )
        return doc

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def verify_transfer_bound(mdp_y: TabularMdp, pi_star_y, pi_tilde, table: PairwiseMetricTable, matching,
                          tol: float = BOUND_TOL) -> TransferReport:
    """Evaluate both sides of the transfer bound on every state of ``Y``."""
    if table.metric_kind != "psm" or table.dist_kind != "tv":
        raise ValueError(f"need a psm table with tv distance, got {table.metric_kind}/{table.dist_kind}")
    if abs(table.gamma - mdp_y.gamma) > 1e-12:
        raise ValueError(f"table gamma {table.gamma} differs from the MDP's {mdp_y.gamma}")
    values = _values(table)
    matching = np.asarray(matching)
    if matching.shape != (mdp_y.n_states,) or values.shape[1] != mdp_y.n_states:
        raise ValueError("matching and table must cover every state of Y")
    lhs = discounted_policy_divergence(mdp_y, check_policy(mdp_y, pi_tilde), check_policy(mdp_y, pi_star_y))
    dist = values[matching, np.arange(mdp_y.n_states)]
    rhs = transfer_coefficient(mdp_y.gamma) * dist
    return TransferReport(
        matched=[int(m) for m in matching],
        distance=dist.tolist(),
        lhs=lhs.tolist(),
        rhs=rhs.tolist(),
        gamma=mdp_y.gamma,
        metric=table.metadata(),
        tol=tol,
    )


def transfer_check(mdp_x: TabularMdp, mdp_y: TabularMdp, method: str = "exact",
                   tol: float = BOUND_TOL) -> TransferReport:
    """Optimal policies, PSM, nearest-neighbour transfer and the bound for one MDP pair."""
    _, pi_x = value_iteration(mdp_x)
    _, pi_y = value_iteration(mdp_y)
    table = psm_exact(mdp_x, pi_x, mdp_y, pi_y, method=method)
    matching = nearest_neighbor_match(table)
    return verify_transfer_bound(mdp_y, pi_y, transfer_policy(pi_x, matching), table, matching, tol)


@dataclass
class ApproxReport:
    """Entrywise check of ``|d* - d_hat| <= d((x,pi*),(x,pi_hat)) + d((y,pi_hat),(y,pi*))``."""

    gap: np.ndarray
    bound: np.ndarray
    tol: float = BOUND_TOL

    @property
    def slack(self) -> np.ndarray:
        return self.bound - self.gap

    @property
    def max_violation(self) -> float:
        return float(-np.min(self.slack))

    @property
    def ok(self) -> bool:
        return self.max_violation <= self.tol

    @property
    def mean_gap(self) -> float:
        return float(np.mean(self.gap))

    def to_dict(self) -> dict:
        return {
            "gap": self.gap.tolist(),
            "bound": self.bound.tolist(),
            "max_slack": float(np.max(self.slack)),
            "min_slack": float(np.min(self.slack)),
            "max_violation": self.max_violation,
            "mean_gap": self.mean_gap,
            "tol": self.tol,
            "ok": self.ok,
        }


def verify_psm_approx_bound(mdp_x, mdp_y, pi_star, pi_hat, method: str = "exact",
                            tol: float = BOUND_TOL, d_star=None) -> ApproxReport:
    """Compare the PSM under ``pi_star = (pi*_x, pi*_y)`` with the one under ``pi_hat``.

    ``d_star`` may be passed in to reuse a table across several ``pi_hat``.
    """
    star_x, star_y = pi_star
    hat_x, hat_y = pi_hat
    if d_star is None:
        d_star = psm_exact(mdp_x, star_x, mdp_y, star_y, method=method).values
    d_hat = generalized_psm(mdp_x, hat_x, mdp_y, hat_y, method=method).values
    own_x = np.diag(generalized_psm(mdp_x, star_x, mdp_x, hat_x, method=method).values)
    own_y = np.diag(generalized_psm(mdp_y, hat_y, mdp_y, star_y, method=method).values)
    return ApproxReport(gap=np.abs(np.asarray(d_star) - d_hat), bound=own_x[:, None] + own_y[None, :], tol=tol)


def bisim_threshold(r_x: float, gamma: float) -> float:
    return (1.0 + 1.0 / gamma) * r_x


def verify_bisim_counterexample(r_x: float, r_y: float, gamma: float, tol: float = BOUND_TOL) -> dict:
    """Cake MDPs where reward-based metrics pair ``x0`` with the behaviourally different ``y1``."""
    if not r_y > bisim_threshold(r_x, gamma):
        raise ValueError(f"need r_y > (1 + 1/gamma) r_x = {bisim_threshold(r_x, gamma)}, got r_y = {r_y}")
    mdp_x, mdp_y = cake_mdp(r_x, gamma, "x"), cake_mdp(r_y, gamma, "y")
    _, pi_x = value_iteration(mdp_x)
    _, pi_y = value_iteration(mdp_y)
    bisim = bisimulation(mdp_x, mdp_y).values
    on_policy = pi_bisimulation(mdp_x, pi_x, mdp_y, pi_y, method="exact").values
    psm = psm_exact(mdp_x, pi_x, mdp_y, pi_y, method="exact").values
    checks = {
        "bisim_prefers_y1": bool(bisim[0, 1] < bisim[0, 0] - tol),
        "pi_bisim_prefers_y1": bool(on_policy[0, 1] < on_policy[0, 0] - tol),
        "psm_x0_y0_zero": bool(abs(psm[0, 0]) <= tol),
    }
    return {
        "r_x": r_x,
        "r_y": r_y,
        "gamma": gamma,
        "bisim": {"x0_y0": float(bisim[0, 0]), "x0_y1": float(bisim[0, 1])},
        "pi_bisim": {"x0_y0": float(on_policy[0, 0]), "x0_y1": float(on_policy[0, 1])},
        "psm": {"x0_y0": float(psm[0, 0]), "x0_y1": float(psm[0, 1])},
        "checks": checks,
        "ok": all(checks.values()),
    }


def load_corpus(path=None) -> dict:
    """Fuzzing corpus parameters; the packaged default when ``path`` is ``None``."""
    if path is None:
        text = resources.files("behavsim").joinpath("configs/fuzz_corpus.json").read_text()
    else:
        with open(path) as fh:
            text = fh.read()
    corpus = json.loads(text)
    if corpus.get("version") != CORPUS_VERSION:
        raise ValueError(f"unsupported corpus version {corpus.get('version')!r}")
    return corpus


def corpus_pair(block: dict, index: int):
    """The ``index``-th MDP pair of a corpus block, reproducible on its own."""
    rng = np.random.default_rng([block["seed"], index])
    gamma = float(block["gammas"][index % len(block["gammas"])])
    deterministic = bool(rng.random() < block["deterministic_fraction"])
    n_actions = int(rng.integers(1, block["max_actions"] + 1))
    pair = []
    for name in ("x", "y"):
        n_states = int(rng.integers(1, block["max_states"] + 1))
        n_terminal = int(rng.integers(0, min(2, n_states - 1) + 1)) if n_states > 1 else 0
        pair.append(random_mdp(rng, n_states, n_actions, gamma, deterministic, n_terminal, name=f"{name}{index}"))
    return pair[0], pair[1], {"index": index, "gamma": gamma, "deterministic": deterministic}


def _replay(mdp_x, mdp_y, info) -> dict:
    return dict(info, mdp_x=mdp_x.to_dict(), mdp_y=mdp_y.to_dict())


def run_transfer_fuzz(corpus: dict | None = None) -> dict:
    """Transfer-bound check over every pair of the corpus."""
    block = (corpus or load_corpus())["transfer"]
    worst, failures = -np.inf, []
    for index in range(block["n_pairs"]):
        mdp_x, mdp_y, info = corpus_pair(block, index)
        report = transfer_check(mdp_x, mdp_y)
        worst = max(worst, report.max_violation)
        if not report.ok:
            failures.append(dict(_replay(mdp_x, mdp_y, info), report=report.to_dict()))
    return {
        "check": "transfer",
        "n_pairs": block["n_pairs"],
        "max_violation": float(worst),
        "n_failures": len(failures),
        "failures": failures,
        "ok": not failures,
    }


def run_psm_approx_fuzz(corpus: dict | None = None, eps_values=None) -> dict:
    """Approximation-bound check for every pair and every ``eps`` in the corpus."""
    block = (corpus or load_corpus())["psm_approx"]
    eps_values = sorted(block["eps"] if eps_values is None else eps_values, reverse=True)
    gaps = {eps: [] for eps in eps_values}
    worst, failures = -np.inf, []
    for index in range(block["n_pairs"]):
        mdp_x, mdp_y, info = corpus_pair(block, index)
        _, star_x = value_iteration(mdp_x)
        _, star_y = value_iteration(mdp_y)
        d_star = psm_exact(mdp_x, star_x, mdp_y, star_y, method="exact").values
        for eps in eps_values:
            hats = (epsilon_suboptimal(star_x, eps), epsilon_suboptimal(star_y, eps))
            report = verify_psm_approx_bound(mdp_x, mdp_y, (star_x, star_y), hats, d_star=d_star)
            gaps[eps].append(report.mean_gap)
            worst = max(worst, report.max_violation)
            if not report.ok:
                failures.append(dict(_replay(mdp_x, mdp_y, info), eps=eps, report=report.to_dict()))
    mean_gap = [float(np.mean(gaps[eps])) for eps in eps_values]
    monotone = all(b <= a + BOUND_TOL for a, b in zip(mean_gap, mean_gap[1:]))
    return {
        "check": "psm-approx",
        "n_pairs": block["n_pairs"],
        "eps": eps_values,
        "mean_gap": mean_gap,
        "gap_monotone": monotone,
        "max_violation": float(worst),
        "n_failures": len(failures),
        "failures": failures,
        "ok": not failures and monotone,
    }


def summary_line(result: dict) -> str:
    status = "PASS" if result["ok"] else "FAIL"
    return (
        f"{status} {result['check']}: {result['n_pairs']} pairs, {result['n_failures']} failures, "
        f"max violation {result['max_violation']:.3e}"
    )
