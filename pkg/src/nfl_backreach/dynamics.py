"""Discrete-time linear plant x' = A x + B u + c and closed-loop rollouts."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .geometry import HyperRectangle
from .network import NeuralNetwork, forward


def _frozen(a, ndim: int) -> np.ndarray:
    a = np.array(a, dtype=float)
    if ndim == 2:
        a = np.atleast_2d(a)
    else:
        a = a.reshape(-1)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class LinearSystem:
    A: np.ndarray
    B: np.ndarray
    c: np.ndarray
    control_lo: np.ndarray
    control_hi: np.ndarray

    def __post_init__(self):
        A = _frozen(self.A, 2)
        B = _frozen(self.B, 2)
        c = _frozen(self.c, 1)
        lo = _frozen(self.control_lo, 1)
        hi = _frozen(self.control_hi, 1)
        n_x = A.shape[0]
        if A.shape != (n_x, n_x):
            raise ValueError(f"A must be square, got {A.shape}")
        if B.shape[0] != n_x:
            raise ValueError(f"B has {B.shape[0]} rows, expected {n_x}")
        if c.shape != (n_x,):
            raise ValueError(f"c has length {c.shape[0]}, expected {n_x}")
        n_u = B.shape[1]
        if lo.shape != (n_u,) or hi.shape != (n_u,):
            raise ValueError(f"control limits must have length {n_u}")
        if np.any(lo > hi):
            raise ValueError("control_lo must be <= control_hi")
        for name, val in (("A", A), ("B", B), ("c", c), ("control_lo", lo), ("control_hi", hi)):
            object.__setattr__(self, name, val)

    @property
    def n_x(self) -> int:
        return self.A.shape[0]

    @property
    def n_u(self) -> int:
        return self.B.shape[1]

    @property
    def control_set(self) -> HyperRectangle:
        return HyperRectangle(self.control_lo, self.control_hi)

    def to_dict(self) -> dict:
        return {
            "A": self.A.tolist(),
            "B": self.B.tolist(),
            "c": self.c.tolist(),
            "u_lo": self.control_lo.tolist(),
            "u_hi": self.control_hi.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> LinearSystem:
        return cls(d["A"], d["B"], d["c"], d["u_lo"], d["u_hi"])

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> LinearSystem:
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class Trajectory:
    states: tuple[np.ndarray, ...]
    controls: tuple[np.ndarray, ...]

    def __post_init__(self):
        if len(self.states) != len(self.controls) + 1:
            raise ValueError("a trajectory has exactly one more state than controls")

    def __len__(self) -> int:
        return len(self.controls)

    @property
    def state_array(self) -> np.ndarray:
        return np.stack(self.states)


def step(sys: LinearSystem, x, u) -> np.ndarray:
    """One transition; also accepts batches x (N, n_x), u (N, n_u)."""
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    if x.shape[-1] != sys.n_x:
        raise ValueError(f"state dimension {x.shape[-1]} != {sys.n_x}")
    if u.shape[-1] != sys.n_u:
        raise ValueError(f"control dimension {u.shape[-1]} != {sys.n_u}")
    return x @ sys.A.T + u @ sys.B.T + sys.c


def simulate_closed_loop(
    sys: LinearSystem, policy: NeuralNetwork, x0, horizon: int
) -> Trajectory:
    """Roll out u_t = policy(x_t). Controls are applied unclipped."""
    if horizon < 0:
        raise ValueError("horizon must be >= 0")
    x = np.asarray(x0, dtype=float)
    states = [x]
    controls = []
    for _ in range(horizon):
        u = forward(policy, x)
        x = step(sys, x, u)
        controls.append(u)
        states.append(x)
    return Trajectory(tuple(states), tuple(controls))


def rollout_batch(sys: LinearSystem, policy: NeuralNetwork, x0: np.ndarray, horizon: int) -> np.ndarray:
    """States of many closed-loop rollouts, shape (horizon + 1, N, n_x)."""
    x = np.atleast_2d(np.asarray(x0, dtype=float))
    out = np.empty((horizon + 1,) + x.shape)
    out[0] = x
    for t in range(horizon):
        x = step(sys, x, forward(policy, x))
        out[t + 1] = x
    return out
