"""Fully connected encoder, projector and policy head with a hand-written backward pass.

    f      = relu(... relu(x W0 + b0) ...)          representation
    z      = relu(f P0 + c0) P1 + c1                 embedding (size k)
    logits = f Wh + bh                               policy head

Parameters live in an ordered dict so they can be enumerated, serialised and
perturbed one entry at a time by ``gradient_check``.
"""

from __future__ import annotations

import json
from collections import OrderedDict

import numpy as np


def _relu(a):
    return np.maximum(a, 0.0)


class EmbeddingModel:
    def __init__(self, input_dim: int, widths=(256, 256), k: int = 64, n_actions: int = 2, seed: int = 0):
        self.input_dim = int(input_dim)
        self.widths = tuple(int(w) for w in widths)
        self.k = int(k)
        self.n_actions = int(n_actions)
        self.seed = seed
        rng = np.random.default_rng(seed)
        params = OrderedDict()
        fan_in = self.input_dim
        for i, width in enumerate(self.widths):
            params[f"enc_W{i}"] = _uniform(rng, fan_in, width)
            params[f"enc_b{i}"] = np.zeros(width)
            fan_in = width
        params["proj_W0"] = _uniform(rng, fan_in, self.k)
        params["proj_b0"] = np.zeros(self.k)
        params["proj_W1"] = _uniform(rng, self.k, self.k)
        params["proj_b1"] = np.zeros(self.k)
        params["head_W"] = _uniform(rng, fan_in, self.n_actions)
        params["head_b"] = np.zeros(self.n_actions)
        self.params = params

    @property
    def n_params(self) -> int:
        return sum(p.size for p in self.params.values())

    def _check(self, obs):
        obs = np.asarray(obs, float)
        if obs.ndim == 1:
            obs = obs[None, :]
        if obs.ndim != 2 or obs.shape[1] != self.input_dim:
            raise ValueError(f"expected observations of width {self.input_dim}, got shape {obs.shape}")
        return obs

    def forward(self, obs, keep_cache: bool = False):
        """Representation, embedding and logits for a batch of flat observations."""
        p = self.params
        a = self._check(obs)
        acts = [a]
        for i in range(len(self.widths)):
            a = _relu(a @ p[f"enc_W{i}"] + p[f"enc_b{i}"])
            acts.append(a)
        f = a
        hidden = _relu(f @ p["proj_W0"] + p["proj_b0"])
        z = hidden @ p["proj_W1"] + p["proj_b1"]
        logits = f @ p["head_W"] + p["head_b"]
        if keep_cache:
            return f, z, logits, {"acts": acts, "hidden": hidden}
        return f, z, logits

    def backward(self, cache, d_f=None, d_z=None, d_logits=None) -> OrderedDict:
        """Parameter gradients given upstream gradients on ``f``, ``z`` and ``logits``."""
        p = self.params
        acts, hidden = cache["acts"], cache["hidden"]
        f = acts[-1]
        grads = OrderedDict((name, np.zeros_like(v)) for name, v in p.items())
        df = np.zeros_like(f) if d_f is None else np.array(d_f, float)
        if d_z is not None:
            grads["proj_W1"] = hidden.T @ d_z
            grads["proj_b1"] = d_z.sum(axis=0)
            dh = (d_z @ p["proj_W1"].T) * (hidden > 0)
            grads["proj_W0"] = f.T @ dh
            grads["proj_b0"] = dh.sum(axis=0)
            df += dh @ p["proj_W0"].T
        if d_logits is not None:
            grads["head_W"] = f.T @ d_logits
            grads["head_b"] = d_logits.sum(axis=0)
            df += d_logits @ p["head_W"].T
        da = df
        for i in reversed(range(len(self.widths))):
            da = da * (acts[i + 1] > 0)
            grads[f"enc_W{i}"] = acts[i].T @ da
            grads[f"enc_b{i}"] = da.sum(axis=0)
            if i:
                da = da @ p[f"enc_W{i}"].T
        return grads

    def step(self, grads, lr: float) -> None:
        for name, g in grads.items():
            self.params[name] -= lr * g

    def architecture(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "widths": list(self.widths),
            "k": self.k,
            "n_actions": self.n_actions,
            "seed": self.seed,
        }

    def to_json(self) -> str:
        return json.dumps(
            {"architecture": self.architecture(), "params": {n: v.tolist() for n, v in self.params.items()}}
        )

    @classmethod
    def from_json(cls, text: str) -> "EmbeddingModel":
        doc = json.loads(text)
        model = cls(**doc["architecture"])
        for name, value in doc["params"].items():
            model.params[name] = np.asarray(value, float)
        return model


def _uniform(rng, fan_in, fan_out):
    scale = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-scale, scale, size=(fan_in, fan_out))


def gradient_check(closure, params, h: float = 1e-5, return_details: bool = False):
    """Worst norm-wise relative error between analytic and central-difference gradients.

    ``closure()`` must return ``(loss, grads)`` for the current values of
    ``params`` (a dict of arrays that is perturbed in place and restored).
    Each parameter array gets ``|num - ana| / max(|num|, |ana|, 1e-12)``.
    """
    loss, analytic = closure()
    if not np.isfinite(loss):
        raise ValueError(f"loss is not finite ({loss})")
    errors = {}
    for name, value in params.items():
        numeric = np.zeros_like(value)
        flat, num_flat = value.reshape(-1), numeric.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            up = closure()[0]
            flat[i] = old - h
            down = closure()[0]
            flat[i] = old
            num_flat[i] = (up - down) / (2.0 * h)
        ana = np.asarray(analytic[name], float)
        denom = max(np.linalg.norm(numeric), np.linalg.norm(ana), 1e-12)
        errors[name] = float(np.linalg.norm(numeric - ana) / denom)
    worst = max(errors.values())
    return (worst, errors) if return_details else worst
