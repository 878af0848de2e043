"""Train/test partitions of the 26 x 11 jumping-task grid."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from itertools import product

import numpy as np

from .jumping import HEIGHTS, POSITIONS

N_TRAIN = 18
ALL_TASKS = tuple(product(POSITIONS, HEIGHTS))
SPLIT_KINDS = ("wide", "narrow", "random")


def load_layouts() -> dict:
    return json.loads(resources.files(__package__).joinpath("layouts.json").read_text())


def task_id(task) -> int:
    """Row-major index of ``(position, height)`` in the grid."""
    position, height = task
    return POSITIONS.index(position) * len(HEIGHTS) + HEIGHTS.index(height)


@dataclass(frozen=True)
class GridSplit:
    kind: str
    training_tasks: tuple
    test_tasks: tuple
    seed: int = None
    meta: dict = field(default_factory=dict, compare=False)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "seed": self.seed,
            "training_tasks": [list(t) for t in self.training_tasks],
            "test_tasks": [list(t) for t in self.test_tasks],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, doc: dict) -> "GridSplit":
        return cls(
            kind=doc["kind"],
            training_tasks=tuple(tuple(t) for t in doc["training_tasks"]),
            test_tasks=tuple(tuple(t) for t in doc["test_tasks"]),
            seed=doc.get("seed"),
        )


def grid_split(kind: str, seed: int = 0) -> GridSplit:
    """Wide and narrow layouts come from the bundled asset; random draws 18 tasks."""
    if kind not in SPLIT_KINDS:
        raise ValueError(f"unknown split kind {kind!r}; expected one of {SPLIT_KINDS}")
    if kind == "random":
        picks = np.random.default_rng(seed).choice(len(ALL_TASKS), size=N_TRAIN, replace=False)
        train = {ALL_TASKS[i] for i in picks}
    else:
        layout = load_layouts()[kind]
        train = {
            (POSITIONS[p], HEIGHTS[h]) for p, h in product(layout["position_indices"], layout["height_indices"])
        }
    training = tuple(t for t in ALL_TASKS if t in train)
    test = tuple(t for t in ALL_TASKS if t not in train)
    return GridSplit(kind=kind, training_tasks=training, test_tasks=test, seed=seed if kind == "random" else None)
