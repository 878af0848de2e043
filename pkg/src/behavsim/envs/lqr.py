"""Linear-quadratic systems whose observations mix the state with distractors.

The observation is ``o = C s`` with ``C = [0.1 W_c; W_d]``. ``W_c`` is an
orthogonal ``n_s x n_s`` matrix shared by every environment, while each
environment draws its own ``n_d x n_s`` distractor map ``W_d`` with
orthonormal columns, so the distractor block is a rotated copy of the state.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

N_STATE = 20
N_ACTION = 20
SPECTRAL_RADIUS = 0.8


def random_orthonormal(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    """``rows x cols`` matrix with orthonormal columns (Haar for square shapes)."""
    if rows < cols:
        raise ValueError(f"need rows >= cols for orthonormal columns, got {rows} x {cols}")
    q, r = np.linalg.qr(rng.standard_normal((rows, cols)))
    return q * np.sign(np.diag(r))


@dataclass(frozen=True, eq=False)
class LqrSystem:
    A: np.ndarray
    B: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    W_c: np.ndarray
    W_d: np.ndarray

    @property
    def n_s(self) -> int:
        return self.A.shape[0]

    @property
    def n_a(self) -> int:
        return self.B.shape[1]

    @property
    def n_d(self) -> int:
        return self.W_d.shape[0]

    @property
    def n_obs(self) -> int:
        return self.n_s + self.n_d

    @property
    def C(self) -> np.ndarray:
        """Observation matrix, ``(n_s + n_d) x n_s``."""
        return np.vstack([0.1 * self.W_c, self.W_d])

    def observe(self, states: np.ndarray) -> np.ndarray:
        """Observations for a batch of states stored as columns."""
        return self.C @ states

    def to_dict(self) -> dict:
        return {k: getattr(self, k).tolist() for k in ("A", "B", "Q", "R", "W_c", "W_d")}

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "LqrSystem":
        doc = json.loads(text)
        return cls(**{k: np.asarray(v, float) for k, v in doc.items()})


def lqr_build(seed: int, n_d: int, n_test: int = 10, n_train: int = 2):
    """Training and test systems that share everything except ``W_d``."""
    if n_d < N_STATE:
        raise ValueError(f"n_d must be at least n_s = {N_STATE} for orthonormal distractor maps, got {n_d}")
    rng = np.random.default_rng(seed)
    A = SPECTRAL_RADIUS * random_orthonormal(rng, N_STATE, N_STATE)
    W_c = random_orthonormal(rng, N_STATE, N_STATE)
    eye = np.eye(N_STATE)

    def make():
        return LqrSystem(A=A, B=eye.copy(), Q=eye.copy(), R=eye.copy(), W_c=W_c, W_d=random_orthonormal(rng, n_d, N_STATE))

    train = [make() for _ in range(n_train)]
    test = [make() for _ in range(n_test)]
    return train, test
