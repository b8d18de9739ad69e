"""One-hidden-layer MLP policy mapping simulation state to fiber activations."""

from __future__ import annotations

import json
from dataclasses import dataclass, fields, replace
from pathlib import Path

import numpy as np

from . import autodiff as ad

HIDDEN = 32
A_MIN, A_MAX = 0.3, 1.0


@dataclass
class PolicyParams:
    W1: np.ndarray  # (32, d)
    b1: np.ndarray  # (32,)
    W2: np.ndarray  # (f, 32)
    b2: np.ndarray  # (f,)
    log_std: np.ndarray | None = None  # (f,), stochastic policies only

    def names(self) -> list[str]:
        return [f.name for f in fields(self) if getattr(self, f.name) is not None]

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.names()}

    def copy(self) -> "PolicyParams":
        return replace(self, **{k: v.copy() for k, v in self.as_dict().items()})

    def mean_part(self) -> "PolicyParams":
        """Copy without the exploration noise parameters."""
        return PolicyParams(self.W1.copy(), self.b1.copy(), self.W2.copy(), self.b2.copy())

    def flat(self) -> np.ndarray:
        return np.concatenate([v.ravel() for v in self.as_dict().values()])

    def with_flat(self, vec: np.ndarray) -> "PolicyParams":
        out, k = {}, 0
        for name, v in self.as_dict().items():
            out[name] = np.asarray(vec[k:k + v.size], dtype=np.float64).reshape(v.shape).copy()
            k += v.size
        return replace(self, **out)

    def to_json(self) -> str:
        return json.dumps({k: v.tolist() for k, v in self.as_dict().items()})

    @classmethod
    def from_json(cls, text: str) -> "PolicyParams":
        doc = json.loads(text)
        arr = {k: np.asarray(v, dtype=np.float64) for k, v in doc.items()}
        return cls(arr["W1"], arr["b1"], arr["W2"], arr["b2"], arr.get("log_std"))

    def save(self, path) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "PolicyParams":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))


def init_policy(d: int, f: int, rng: np.random.Generator, init_log_std: float | None = None,
                out_scale: float = 1.0) -> PolicyParams:
    """Uniform fan-in initialization; ``out_scale`` shrinks the output layer."""
    k1 = 1.0 / np.sqrt(d)
    k2 = 1.0 / np.sqrt(HIDDEN)
    W1 = rng.uniform(-k1, k1, (HIDDEN, d))
    b1 = rng.uniform(-k1, k1, HIDDEN)
    W2 = rng.uniform(-k2, k2, (f, HIDDEN)) * out_scale
    b2 = rng.uniform(-k2, k2, f) * out_scale
    log_std = None if init_log_std is None else np.full(f, float(init_log_std))
    return PolicyParams(W1, b1, W2, b2, log_std)


def zero_policy(d: int, f: int) -> PolicyParams:
    return PolicyParams(np.zeros((HIDDEN, d)), np.zeros(HIDDEN), np.zeros((f, HIDDEN)), np.zeros(f))


def features(x, v, center_x: bool = True):
    """Flattened positions and velocities; x-coordinates relative to the centroid if ``center_x``."""
    x = ad._lift(x)
    v = ad._lift(v)
    n = x.shape[0]
    if center_x:
        cx = ad.reshape(ad.mean(x[:, 0]), (1, 1))
        x = x - cx * np.array([[1.0, 0.0]])
    return ad.concat([ad.reshape(x, (2 * n,)), ad.reshape(v, (2 * n,))])


def feature_dim(n_vertices: int) -> int:
    return 4 * n_vertices


def policy_forward(params, feat, a_min: float = A_MIN, a_max: float = A_MAX):
    """Activations in ``[a_min, a_max]`` for one feature vector or a batch of rows.

    ``params`` may hold arrays or ``Var`` nodes (a dict or ``PolicyParams``).
    """
    p = params.as_dict() if isinstance(params, PolicyParams) else params
    hidden = ad.relu(ad.affine(p["W1"], feat, p["b1"]))
    raw = ad.affine(p["W2"], hidden, p["b2"])
    return ad.sigmoid(raw) * (a_max - a_min) + a_min
