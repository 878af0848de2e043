"""Command-line entry point: ``behavsim <subcommand> [options]``.

Every subcommand resolves its settings as built-in defaults, then an optional
JSON ``--config`` file, then explicit flags (flags win), and writes the
resolved settings to ``config.json`` next to its outputs. Exit codes: 0 on
success, 1 when a checked bound or assertion fails, 2 for usage or input
errors.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
from contextlib import nullcontext
from importlib import resources
from pathlib import Path

import numpy as np

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2
METRIC_KINDS = ("psm", "pi_bisim", "bisim", "generalized_psm")
VERIFY_CHECKS = ("transfer", "psm-approx", "counterexample", "all")
LQR_ALIASES = {"psm": "psm_aggregation", "l1": "l1_sparse"}


class UsageError(Exception):
    """Bad flags, config files or input documents (exit code 2)."""


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write(text)


def _dump(doc) -> str:
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def _read_json(path, what: str):
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise UsageError(f"{what} file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None


def resolve_config(args, defaults: dict) -> dict:
    """Defaults, overlaid by the ``--config`` file, overlaid by explicit flags."""
    config = dict(defaults)
    if getattr(args, "config", None):
        doc = _read_json(args.config, "config")
        if not isinstance(doc, dict):
            raise UsageError(f"{args.config}: expected a JSON object")
        unknown = sorted(set(doc) - set(defaults))
        if unknown:
            raise UsageError(f"{args.config}: unknown field(s) {', '.join(unknown)}")
        config.update(doc)
    for key in defaults:
        value = getattr(args, key, None)
        if value is not None:
            config[key] = value
    return config


def _echo_config(out: Path, command: str, config: dict) -> None:
    _write(out / "config.json", _dump({"command": command, "config": config}))


def _parse_task(text: str) -> tuple:
    try:
        position, height = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise UsageError(f"task {text!r} is not of the form POSITIONxHEIGHT") from None
    return position, height


def _tasks(value) -> list:
    if isinstance(value, str):
        return [_parse_task(t) for t in value.split(",") if t.strip()]
    return [tuple(int(v) for v in t) for t in value]


# ---------------------------------------------------------------- metric

METRIC_DEFAULTS = {
    "kind": "psm",
    "x": None,
    "y": None,
    "pi_x": None,
    "pi_y": None,
    "method": "fixed_point",
    "tol": 1e-9,
    "dist_kind": "tv",
    "out": "metric_out",
}


def _load_mdp(path, name):
    from .mdp import TabularMdp

    doc = _read_json(path, "MDP")
    try:
        return TabularMdp.from_dict(doc, name=name)
    except (ValueError, TypeError, KeyError) as exc:
        raise UsageError(f"{path}: {exc}") from None


def _load_policy(path, mdp):
    from .mdp import check_policy

    try:
        return check_policy(mdp, np.asarray(_read_json(path, "policy"), float))
    except ValueError as exc:
        raise UsageError(f"{path}: {exc}") from None


def cmd_metric(args) -> int:
    from . import metrics
    from .mdp import value_iteration

    cfg = resolve_config(args, METRIC_DEFAULTS)
    if cfg["kind"] not in METRIC_KINDS:
        raise UsageError(f"unknown metric kind {cfg['kind']!r}; expected one of {METRIC_KINDS}")
    if not cfg["x"] or not cfg["y"]:
        raise UsageError("both --x and --y MDP files are required")
    mdp_x, mdp_y = _load_mdp(cfg["x"], "x"), _load_mdp(cfg["y"], "y")
    pi_x = _load_policy(cfg["pi_x"], mdp_x) if cfg["pi_x"] else value_iteration(mdp_x)[1]
    pi_y = _load_policy(cfg["pi_y"], mdp_y) if cfg["pi_y"] else value_iteration(mdp_y)[1]
    try:
        if cfg["kind"] == "bisim":
            table = metrics.bisimulation(mdp_x, mdp_y, tol=cfg["tol"])
        elif cfg["kind"] == "pi_bisim":
            table = metrics.pi_bisimulation(mdp_x, pi_x, mdp_y, pi_y, tol=cfg["tol"], method=cfg["method"])
        else:
            solver = metrics.psm_exact if cfg["kind"] == "psm" else metrics.generalized_psm
            table = solver(mdp_x, pi_x, mdp_y, pi_y, cfg["dist_kind"], tol=cfg["tol"], method=cfg["method"])
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    out = Path(cfg["out"])
    _write(out / "table.csv", table.to_csv())
    _write(out / "table.json", table.to_json() + "\n")
    _echo_config(out, "metric", cfg)
    print(f"{cfg['kind']} table {table.values.shape[0]}x{table.values.shape[1]} written to {out}")
    return EXIT_OK


# ---------------------------------------------------------------- verify

VERIFY_DEFAULTS = {
    "check": "transfer",
    "corpus": None,
    "n_pairs": None,
    "eps": None,
    "rx": 1.0,
    "ry": 3.0,
    "gamma": 0.9,
    "out": "verify_out",
}


def cmd_verify(args) -> int:
    from . import transfer

    cfg = resolve_config(args, VERIFY_DEFAULTS)
    if cfg["check"] not in VERIFY_CHECKS:
        raise UsageError(f"unknown check {cfg['check']!r}; expected one of {VERIFY_CHECKS}")
    try:
        corpus = transfer.load_corpus(cfg["corpus"])
    except (OSError, ValueError) as exc:
        raise UsageError(f"corpus: {exc}") from None
    if cfg["n_pairs"] is not None:
        for block in ("transfer", "psm_approx"):
            corpus[block]["n_pairs"] = int(cfg["n_pairs"])
    results = []
    checks = ("transfer", "psm-approx", "counterexample") if cfg["check"] == "all" else (cfg["check"],)
    for check in checks:
        if check == "transfer":
            results.append(transfer.run_transfer_fuzz(corpus))
        elif check == "psm-approx":
            eps = None if cfg["eps"] is None else [float(cfg["eps"])]
            results.append(transfer.run_psm_approx_fuzz(corpus, eps))
        else:
            try:
                report = transfer.verify_bisim_counterexample(cfg["rx"], cfg["ry"], cfg["gamma"])
            except ValueError as exc:
                raise UsageError(str(exc)) from None
            results.append(dict(report, check="counterexample"))
    out = Path(cfg["out"])
    _write(out / "report.json", _dump({"corpus": corpus, "results": results}))
    _echo_config(out, "verify", cfg)
    for result in results:
        if result["check"] == "counterexample":
            status = "PASS" if result["ok"] else "FAIL"
            print(f"{status} counterexample: bisim {result['bisim']}, pi_bisim {result['pi_bisim']}, psm {result['psm']}")
        else:
            print(transfer.summary_line(result))
    return EXIT_OK if all(r["ok"] for r in results) else EXIT_FAIL


# ---------------------------------------------------------------- render

RENDER_DEFAULTS = {
    "position": 25,
    "height": 10,
    "color": "white",
    "x": 0,
    "phase": 0,
    "downsample": 1,
    "trajectory": False,
    "out": "render_out",
}


def _instance(position, height, color):
    from .envs.jumping import JumpingInstance

    try:
        return JumpingInstance(int(position), int(height), color=color)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def cmd_render(args) -> int:
    from .envs.images import to_bytes
    from .envs.jumping import downsample, optimal_trajectory_states, render

    cfg = resolve_config(args, RENDER_DEFAULTS)
    inst = _instance(cfg["position"], cfg["height"], cfg["color"])
    ext = "pgm" if cfg["color"] == "white" else "ppm"
    if cfg["trajectory"]:
        states = optimal_trajectory_states(inst)
    else:
        if not (0 <= cfg["x"] < inst.goal_x and 0 <= cfg["phase"] < inst.n_phases):
            raise UsageError(f"x must lie in [0, {inst.goal_x}) and phase in [0, {inst.n_phases})")
        states = [inst.state_index(cfg["x"], cfg["phase"])]
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    for i, state in enumerate(states):
        frame = render(inst, state)
        if cfg["downsample"] > 1:
            frame = downsample(frame, cfg["downsample"])
        with open(out / f"frame_{i:03d}_s{state}.{ext}", "wb") as fh:
            fh.write(to_bytes(frame))
    _echo_config(out, "render", cfg)
    print(f"{len(states)} frame(s) written to {out}")
    return EXIT_OK


# ---------------------------------------------------------- train-jumping

TRAIN_DEFAULTS = {
    "method": "pse",
    "split": "wide",
    "split_seed": 0,
    "seed": 0,
    "seeds": 1,
    "out": "train_out",
}
AGENT_KEYS = (
    "alpha", "lam", "beta", "k", "widths", "lr", "lr_decay", "epochs", "batch_size", "downsample", "color",
    "eval_every",
)


def jumping_defaults(method: str) -> dict:
    """Shipped hyperparameters for ``method`` (common block plus per-method overrides)."""
    doc = json.loads(resources.files("behavsim").joinpath("configs/jumping.json").read_text())
    if method not in doc["methods"]:
        raise UsageError(f"unknown method {method!r}; expected one of {tuple(doc['methods'])}")
    return dict(doc["common"], **doc["methods"][method])


def grid_image(split, solved: dict) -> np.ndarray:
    """26 x 11 tile image: solved 255, unsolved 0, training tasks 128 (rows are heights)."""
    from .envs.jumping import HEIGHTS, POSITIONS

    image = np.zeros((len(HEIGHTS), len(POSITIONS)))
    for (position, height), ok in solved.items():
        image[HEIGHTS.index(height), POSITIONS.index(position)] = 1.0 if ok else 0.0
    for position, height in split.training_tasks:
        image[HEIGHTS.index(height), POSITIONS.index(position)] = 128.0 / 255.0
    return image


def model_document(agent) -> str:
    doc = json.loads(agent.model_.to_json())
    doc["agent"] = {"method": agent.method, "downsample": agent.downsample, "color": agent.color}
    return json.dumps(doc, sort_keys=True) + "\n"


def _split(kind, seed):
    from .envs.grid import grid_split

    try:
        return grid_split(kind, int(seed))
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def cmd_train_jumping(args) -> int:
    from .embed.agent import JumpingAgent
    from .envs.images import to_bytes

    # The method picks which shipped hyperparameters form the defaults.
    method = args.method
    if method is None and args.config:
        method = _read_json(args.config, "config").get("method")
    method = method or TRAIN_DEFAULTS["method"]
    cfg = resolve_config(args, {**TRAIN_DEFAULTS, **jumping_defaults(method)})
    cfg["widths"] = [int(w) for w in (cfg["widths"].split(",") if isinstance(cfg["widths"], str) else cfg["widths"])]
    split = _split(cfg["split"], cfg["split_seed"])
    out = Path(cfg["out"])
    runs = []
    for seed in range(cfg["seed"], cfg["seed"] + cfg["seeds"]):
        params = {k: cfg[k] for k in AGENT_KEYS}
        params["widths"] = tuple(params["widths"])
        agent = JumpingAgent(method=cfg["method"], seed=seed, **params)
        try:
            agent.fit(split.training_tasks, eval_tasks=split.test_tasks if cfg["eval_every"] else None)
        except FloatingPointError as exc:
            print(f"seed {seed}: {exc}", file=sys.stderr)
            return EXIT_FAIL
        test = agent.solved(split.test_tasks)
        train = agent.solved(split.training_tasks)
        solved = dict(zip(split.test_tasks, test.tolist()))
        _write(out / f"metrics_seed{seed}.csv", agent.log_csv())
        _write(out / f"model_seed{seed}.json", model_document(agent))
        with open(out / f"grid_seed{seed}.pgm", "wb") as fh:
            fh.write(to_bytes(grid_image(split, solved)))
        runs.append({"seed": seed, "test_solve_pct": 100.0 * float(test.mean()),
                     "train_solve_pct": 100.0 * float(train.mean())})
        print(f"seed {seed}: test {runs[-1]['test_solve_pct']:.2f}% train {runs[-1]['train_solve_pct']:.2f}%")
    pct = [r["test_solve_pct"] for r in runs]
    summary = {"method": cfg["method"], "split": cfg["split"], "runs": runs,
               "mean_test_solve_pct": float(np.mean(pct)), "std_test_solve_pct": float(np.std(pct))}
    _write(out / "summary.json", _dump(summary))
    _echo_config(out, "train-jumping", cfg)
    print(f"{cfg['method']} on {cfg['split']}: mean test solve {summary['mean_test_solve_pct']:.2f}%")
    return EXIT_OK


# ------------------------------------------------------------- eval-grid

EVAL_DEFAULTS = {"model": None, "split": "wide", "split_seed": 0, "color": None, "downsample": None,
                 "out": "eval_out"}


def _load_model(path):
    from .embed.model import EmbeddingModel

    doc = _read_json(path, "model")
    try:
        model = EmbeddingModel.from_json(json.dumps(doc))
    except (KeyError, TypeError, ValueError) as exc:
        raise UsageError(f"{path}: malformed model document ({exc})") from None
    return model, doc.get("agent", {})


def cmd_eval_grid(args) -> int:
    from .embed.agent import as_instance, solve_grid
    from .envs.images import to_bytes

    cfg = resolve_config(args, EVAL_DEFAULTS)
    if not cfg["model"]:
        raise UsageError("--model is required")
    model, meta = _load_model(cfg["model"])
    color = cfg["color"] or meta.get("color", "white")
    factor = cfg["downsample"] or meta.get("downsample", 2)
    split = _split(cfg["split"], cfg["split_seed"])
    from .envs.grid import ALL_TASKS

    try:
        solved = solve_grid(model, [as_instance(t, color) for t in ALL_TASKS], factor)
    except ValueError as exc:
        raise UsageError(f"model does not fit the observations: {exc}") from None
    by_task = dict(zip(ALL_TASKS, solved.tolist()))
    test = [by_task[t] for t in split.test_tasks]
    out = Path(cfg["out"])
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["position", "height", "training", "solved"])
    train = set(split.training_tasks)
    for (position, height), ok in by_task.items():
        writer.writerow([position, height, int((position, height) in train), int(ok)])
    _write(out / "solved.csv", buf.getvalue())
    with open(out / "grid.pgm", "wb") as fh:
        fh.write(to_bytes(grid_image(split, {t: by_task[t] for t in split.test_tasks})))
    summary = {"test_solve_pct": 100.0 * float(np.mean(test)),
               "train_solve_pct": 100.0 * float(np.mean([by_task[t] for t in split.training_tasks]))}
    _write(out / "summary.json", _dump(summary))
    _echo_config(out, "eval-grid", cfg)
    print(f"test solve {summary['test_solve_pct']:.2f}%")
    return EXIT_OK


# ------------------------------------------------------------ embed-dump

DUMP_DEFAULTS = {"model": None, "tasks": "25x10,45x10", "color": None, "downsample": None, "out": "embed_out"}


def cmd_embed_dump(args) -> int:
    from sklearn.decomposition import PCA

    from .embed.agent import as_instance, observe
    from .envs.jumping import optimal_trajectory_states

    cfg = resolve_config(args, DUMP_DEFAULTS)
    if not cfg["model"]:
        raise UsageError("--model is required")
    model, meta = _load_model(cfg["model"])
    color = cfg["color"] or meta.get("color", "white")
    factor = cfg["downsample"] or meta.get("downsample", 2)
    rows, embeddings = [], []
    for task in _tasks(cfg["tasks"]):
        inst = as_instance(task, color)
        states = optimal_trajectory_states(inst)
        try:
            _, z, _ = model.forward(observe(inst, states, factor))
        except ValueError as exc:
            raise UsageError(f"model does not fit the observations: {exc}") from None
        for state, vec in zip(states, z):
            rows.append([task[0], task[1], state, inst.obstacle_distance(state)])
            embeddings.append(vec)
    embeddings = np.array(embeddings)
    n_comp = min(2, *embeddings.shape)
    pcs = PCA(n_components=n_comp, svd_solver="full").fit_transform(embeddings)
    out = Path(cfg["out"])
    for name, header, values in (
        ("embeddings.csv", [f"z{i}" for i in range(embeddings.shape[1])], embeddings),
        ("pca.csv", [f"pc{i + 1}" for i in range(n_comp)], pcs),
    ):
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["position", "height", "state", "obstacle_distance", *header])
        for meta_row, vec in zip(rows, values):
            writer.writerow([*meta_row, *(repr(float(v)) for v in vec)])
        _write(out / name, buf.getvalue())
    _echo_config(out, "embed-dump", cfg)
    print(f"{len(rows)} embeddings written to {out}")
    return EXIT_OK


# ------------------------------------------------------------------ lqr

LQR_DEFAULTS = {
    "methods": "psm,overparam",
    "nd": "500",
    "seeds": 20,
    "seed": 0,
    "n_test": 10,
    "hidden": 200,
    "lr": 2e-2,
    "n_iter": 600,
    "l1": 1e-3,
    "psm_weight": 10.0,
    "out": "lqr_out",
}


def _csv_list(value, cast):
    if isinstance(value, (list, tuple)):
        return [cast(v) for v in value]
    return [cast(v) for v in str(value).split(",") if v.strip()]


def cmd_lqr(args) -> int:
    from .envs.lqr import N_STATE, lqr_build
    from .lqr import METHODS, LinearLqrPolicy, evaluate_generalization, generalizing_policy

    cfg = resolve_config(args, LQR_DEFAULTS)
    methods = [LQR_ALIASES.get(m, m) for m in _csv_list(cfg["methods"], str)]
    unknown = [m for m in methods if m not in METHODS + ("analytic",)]
    if unknown:
        raise UsageError(f"unknown method(s) {unknown}; expected from {METHODS + ('analytic',)}")
    try:
        dims = _csv_list(cfg["nd"], int)
    except ValueError:
        raise UsageError(f"--nd must be a comma-separated list of integers, got {cfg['nd']!r}") from None
    small = [n for n in dims if n < N_STATE]
    if small:
        raise UsageError(f"n_d must be at least n_s = {N_STATE}; got {small}")
    per_seed = []
    for n_d in dims:
        for seed in range(cfg["seed"], cfg["seed"] + cfg["seeds"]):
            train, test = lqr_build(seed, n_d, n_test=cfg["n_test"])
            for method in methods:
                if method == "analytic":
                    K = generalizing_policy(train[0])
                else:
                    policy = LinearLqrPolicy(method=method, hidden=cfg["hidden"], lr=cfg["lr"], n_iter=cfg["n_iter"],
                                             l1=cfg["l1"], psm_weight=cfg["psm_weight"], seed=seed)
                    try:
                        K = policy.fit(train).K_
                    except FloatingPointError as exc:
                        print(f"{method} n_d={n_d} seed={seed}: {exc}", file=sys.stderr)
                        return EXIT_FAIL
                error = evaluate_generalization(K, test)[0]
                per_seed.append((method, n_d, seed, error))
    out = Path(cfg["out"])
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["method", "n_d", "seed", "abs_error"])
    writer.writerows([m, n, s, repr(e)] for m, n, s, e in per_seed)
    _write(out / "per_seed.csv", buf.getvalue())
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["method", "n_d", "mean_abs_error", "std_abs_error", "n_seeds"])
    for method in methods:
        for n_d in dims:
            errs = [e for m, n, _, e in per_seed if m == method and n == n_d]
            writer.writerow([method, n_d, repr(float(np.mean(errs))), repr(float(np.std(errs))), len(errs)])
            print(f"{method:>16} n_d={n_d}: mean abs error {np.mean(errs):.4g} (std {np.std(errs):.3g})")
    _write(out / "table.csv", buf.getvalue())
    _echo_config(out, "lqr", cfg)
    return EXIT_OK


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="behavsim", description="Behavioural similarity metrics and experiments.")
    sub = parser.add_subparsers(dest="command", required=True)

    def command(name, handler, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="JSON file of settings; explicit flags take precedence")
        p.add_argument("--out", help="output directory")
        p.set_defaults(handler=handler)
        return p

    p = command("metric", cmd_metric, "metric table between the states of two MDP files")
    p.add_argument("--kind", choices=METRIC_KINDS)
    p.add_argument("--x", help="MDP JSON for the row states")
    p.add_argument("--y", help="MDP JSON for the column states")
    p.add_argument("--pi-x", dest="pi_x", help="policy JSON (states x actions); default: optimal")
    p.add_argument("--pi-y", dest="pi_y", help="policy JSON (states x actions); default: optimal")
    p.add_argument("--method", choices=("fixed_point", "exact"))
    p.add_argument("--tol", type=float)
    p.add_argument("--dist-kind", dest="dist_kind", choices=("tv",))

    p = command("verify", cmd_verify, "check the transfer and approximation bounds on a fuzzing corpus")
    p.add_argument("--check", choices=VERIFY_CHECKS)
    p.add_argument("--corpus", help="corpus JSON; default: the packaged corpus")
    p.add_argument("--n-pairs", dest="n_pairs", type=int, help="override the number of MDP pairs per check")
    p.add_argument("--eps", type=float, help="single perturbation level for psm-approx")
    p.add_argument("--rx", type=float)
    p.add_argument("--ry", type=float)
    p.add_argument("--gamma", type=float)

    p = command("render", cmd_render, "render jumping-task frames as PGM/PPM")
    p.add_argument("--position", type=int)
    p.add_argument("--height", type=int)
    p.add_argument("--color", choices=("white", "red", "green"))
    p.add_argument("--x", type=int, help="agent column")
    p.add_argument("--phase", type=int, help="jump phase (0 on the ground)")
    p.add_argument("--downsample", type=int)
    p.add_argument("--trajectory", action="store_true", default=None, help="render the whole optimal trajectory")

    p = command("train-jumping", cmd_train_jumping, "train pixel policies on a jumping-task split")
    p.add_argument("--method", choices=("imitation_only", "pse", "l2_psm", "cme_pi_bisim", "l2_pi_bisim"))
    p.add_argument("--split", choices=("wide", "narrow", "random"))
    p.add_argument("--split-seed", dest="split_seed", type=int)
    p.add_argument("--seed", type=int, help="first seed")
    p.add_argument("--seeds", type=int, help="number of consecutive seeds")
    p.add_argument("--alpha", type=float)
    p.add_argument("--lam", type=float, help="inverse temperature")
    p.add_argument("--beta", type=float, help="similarity kernel scale")
    p.add_argument("--k", type=int, help="embedding size")
    p.add_argument("--widths", help="encoder widths, comma separated")
    p.add_argument("--lr", type=float)
    p.add_argument("--lr-decay", dest="lr_decay", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--downsample", type=int)
    p.add_argument("--color", choices=("white", "red", "green"))
    p.add_argument("--eval-every", dest="eval_every", type=int, help="epochs between test-grid evaluations (0: never)")

    p = command("eval-grid", cmd_eval_grid, "evaluate a trained model on all 286 tasks")
    p.add_argument("--model", help="model JSON written by train-jumping")
    p.add_argument("--split", choices=("wide", "narrow", "random"))
    p.add_argument("--split-seed", dest="split_seed", type=int)
    p.add_argument("--color", choices=("white", "red", "green"))
    p.add_argument("--downsample", type=int)

    p = command("embed-dump", cmd_embed_dump, "dump embeddings of optimal-trajectory states")
    p.add_argument("--model", help="model JSON written by train-jumping")
    p.add_argument("--tasks", help="comma-separated POSITIONxHEIGHT list")
    p.add_argument("--color", choices=("white", "red", "green"))
    p.add_argument("--downsample", type=int)

    p = command("lqr", cmd_lqr, "LQR generalization experiment")
    p.add_argument("--methods", help="comma separated: psm, overparam, l1, analytic")
    p.add_argument("--nd", help="comma-separated distractor dimensions")
    p.add_argument("--seeds", type=int)
    p.add_argument("--seed", type=int, help="first seed")
    p.add_argument("--n-test", dest="n_test", type=int)
    p.add_argument("--hidden", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--n-iter", dest="n_iter", type=int)
    p.add_argument("--l1", type=float)
    p.add_argument("--psm-weight", dest="psm_weight", type=float)
    return parser


def _thread_limit():
    value = os.environ.get("BEHAVSIM_THREADS")
    if not value:
        return nullcontext()
    try:
        limit = int(value)
    except ValueError:
        raise UsageError(f"BEHAVSIM_THREADS must be an integer, got {value!r}") from None
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=limit)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        with _thread_limit():
            return args.handler(args)
    except UsageError as exc:
        print(f"behavsim {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
