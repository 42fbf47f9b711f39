"""Benchmark plants, expert control laws, trained policies and the scenario registry."""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np
import scipy.linalg

from . import network
from .dynamics import LinearSystem
from .geometry import HyperRectangle
from .network import Dataset, NeuralNetwork

FAULTY_BAND = 1.5
FAULTY_SPEED = 1.0

# training setup shared by every shipped policy
TRAIN_REGION = HyperRectangle.from_center([0.0, 0.0], [10.0, 10.0])
TRAIN_SAMPLES = 100_000
TRAIN_EPOCHS = 20
TRAIN_BATCH = 32
HELD_OUT_FRACTION = 0.1
PILOT_MSE_THRESHOLD = 0.05

FIELDS = ("eq19", "faulty", "lqr")
POLICY_FILES = {"eq19": "ground_robot_policy.json", "faulty": "ground_robot_faulty_policy.json", "lqr": "double_integrator_policy.json"}
POLICY_HIDDEN = {"eq19": (10, 10), "faulty": (10, 10), "lqr": (5, 5)}
POLICY_SEEDS = {"eq19": 0, "faulty": 0, "lqr": 0}


def double_integrator_system() -> LinearSystem:
    """Unit-step double integrator (position, velocity), |u| <= 1."""
    return LinearSystem(
        A=[[1.0, 1.0], [0.0, 1.0]],
        B=[[0.5], [1.0]],
        c=[0.0, 0.0],
        control_lo=[-1.0],
        control_hi=[1.0],
    )


def ground_robot_system() -> LinearSystem:
    """Feedback-linearized unicycle as two decoupled integrators, |u_i| <= 1."""
    return LinearSystem(
        A=np.eye(2), B=np.eye(2), c=np.zeros(2), control_lo=[-1.0, -1.0], control_hi=[1.0, 1.0]
    )


def _clamp(v):
    return np.clip(v, -1.0, 1.0)


def vector_field(x) -> np.ndarray:
    """Obstacle-avoiding velocity field around the origin; accepts (2,) or (N, 2).

    The field is undefined at the exact origin; there it returns [1, 0].
    """
    x = np.asarray(x, dtype=float)
    px, py = x[..., 0], x[..., 1]
    r2 = px**2 + py**2
    at_origin = r2 == 0
    r2 = np.where(at_origin, 1.0, r2)
    e = np.exp(-px / 2 + 2)
    ux = _clamp(1 + 2 * px / r2)
    uy = _clamp(py / r2 + 2 * np.sign(py) * e / (1 + e) ** 2)
    ux = np.where(at_origin, 1.0, ux)
    uy = np.where(at_origin, 0.0, uy)
    return np.stack([ux, uy], axis=-1)


def faulty_vector_field(x, band: float = FAULTY_BAND, speed: float = FAULTY_SPEED) -> np.ndarray:
    """:func:`vector_field` with a bug: near the line y = -x, head straight for the origin."""
    x = np.asarray(x, dtype=float)
    u = vector_field(x)
    px, py = x[..., 0], x[..., 1]
    norm = np.hypot(px, py)
    on_band = (np.abs(px + py) / np.sqrt(2.0) <= band) & (norm > 0)
    safe = np.where(norm > 0, norm, 1.0)[..., None]
    toward = _clamp(-x / safe * speed)
    return np.where(on_band[..., None], toward, u)


def lqr_gain(sys: LinearSystem, q: float = 1.0, r: float = 1.0) -> np.ndarray:
    """Discrete-time infinite-horizon LQR gain K for u = -K x."""
    Q = q * np.eye(sys.n_x)
    R = r * np.eye(sys.n_u)
    P = scipy.linalg.solve_discrete_are(sys.A, sys.B, Q, R)
    return np.linalg.solve(R + sys.B.T @ P @ sys.B, sys.B.T @ P @ sys.A)


def lqr_field(x, sys: LinearSystem | None = None) -> np.ndarray:
    """Saturated LQR feedback for the double integrator, clip(-K x, -1, 1)."""
    sys = sys or double_integrator_system()
    K = lqr_gain(sys)
    x = np.asarray(x, dtype=float)
    return np.clip(-(x @ K.T), sys.control_lo, sys.control_hi)


def expert(name: str):
    if name == "eq19":
        return vector_field
    if name == "faulty":
        return faulty_vector_field
    if name == "lqr":
        return lqr_field
    raise ValueError(f"unknown field {name!r}; choose from {FIELDS}")


def make_dataset(
    field: str,
    n_samples: int = TRAIN_SAMPLES,
    region: HyperRectangle = TRAIN_REGION,
    seed: int = 0,
) -> Dataset:
    rng = np.random.default_rng(seed)
    X = region.sample(rng, n_samples)
    return Dataset(X, expert(field)(X))


@dataclass
class TrainedPolicy:
    policy: NeuralNetwork
    held_out_mse: np.ndarray


def train_policy(
    field: str,
    hidden=None,
    epochs: int = TRAIN_EPOCHS,
    batch: int = TRAIN_BATCH,
    seed: int | None = None,
    n_samples: int = TRAIN_SAMPLES,
    lr: float = 1e-2,
    saturate: bool = True,
) -> TrainedPolicy:
    """Generate expert data, fit a network, report per-output held-out MSE.

    With ``saturate`` the fitted network gets an exact clamp head so its
    outputs never leave the plant's control limits; the backreachable-set
    bound relies on that.
    """
    hidden = POLICY_HIDDEN[field] if hidden is None else hidden
    seed = POLICY_SEEDS[field] if seed is None else seed
    data = make_dataset(field, n_samples, seed=seed)
    held_out, train = data.split(HELD_OUT_FRACTION, seed=seed)
    nn = network.train_regression(train, hidden, epochs=epochs, batch=batch, seed=seed, lr=lr)
    if saturate:
        sys = field_system(field)
        nn = network.with_output_clamp(nn, sys.control_lo, sys.control_hi)
    return TrainedPolicy(nn, network.mse(nn, held_out))


def field_system(field: str) -> LinearSystem:
    return double_integrator_system() if field == "lqr" else ground_robot_system()


def policy_path(field: str) -> Path:
    return Path(str(resources.files("nfl_backreach") / "data" / POLICY_FILES[field]))


def load_policy(field: str) -> NeuralNetwork:
    path = policy_path(field)
    if not path.exists():
        raise FileNotFoundError(f"policy file for {field!r} missing: {path}; run `nfl-backreach train --field {field}`")
    return network.load(path)


@dataclass
class Scenario:
    name: str
    system: LinearSystem
    policy_field: str
    target: HyperRectangle
    init: HyperRectangle
    tau: int
    r: tuple[int, ...]
    description: str = ""

    def __post_init__(self):
        n = self.system.n_x
        if self.target.dim != n or self.init.dim != n or len(self.r) != n:
            raise ValueError(f"scenario {self.name}: inconsistent dimensions")

    @property
    def policy_file(self) -> Path:
        return policy_path(self.policy_field)

    def policy(self) -> NeuralNetwork:
        nn = load_policy(self.policy_field)
        if nn.n_in != self.system.n_x or nn.n_out != self.system.n_u:
            raise ValueError(f"scenario {self.name}: policy dimensions do not match the system")
        return nn

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "system": self.system.to_dict(),
            "policy": str(self.policy_file),
            "policy_field": self.policy_field,
            "target": self.target.to_dict(),
            "init": self.init.to_dict(),
            "tau": self.tau,
            "r": list(self.r),
            "description": self.description,
        }


DI_TARGET = HyperRectangle([4.5, -0.25], [5.0, 0.25])
GR_TARGET = HyperRectangle.from_center([0.0, 0.0], [1.0, 1.0])


def build_scenarios() -> list[Scenario]:
    di = double_integrator_system()
    gr = ground_robot_system()
    return [
        Scenario(
            "DI-5", di, "lqr", DI_TARGET, HyperRectangle([2.5, -0.25], [3.0, 0.25]), 5, (4, 4),
            "double integrator, backprojection from a box at position ~4.75",
        ),
        Scenario(
            "GR-above", gr, "eq19", GR_TARGET, HyperRectangle.from_center([-5.0, 1.0], [0.5, 0.5]), 9, (4, 4),
            "ground robot starting above the obstacle axis",
        ),
        Scenario(
            "GR-boundary", gr, "eq19", GR_TARGET, HyperRectangle.from_center([-5.0, 0.0], [0.5, 0.5]), 9, (4, 4),
            "ground robot starting on the decision boundary",
        ),
        Scenario(
            "GR-faulty", gr, "faulty", GR_TARGET, HyperRectangle.from_center([-5.0, 1.0], [0.5, 0.5]), 9, (4, 4),
            "ground robot with a policy that steers the line y=-x into the obstacle",
        ),
    ]


def get_scenario(name: str) -> Scenario:
    for s in build_scenarios():
        if s.name == name:
            return s
    raise KeyError(f"unknown scenario {name!r}; known: {[s.name for s in build_scenarios()]}")


def export_registry(path) -> None:
    Path(path).write_text(json.dumps([s.to_dict() for s in build_scenarios()], indent=2))
