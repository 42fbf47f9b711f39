"""Feedforward ReLU policies: evaluation, JSON storage and a small SGD trainer."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

ACTIVATIONS = ("relu", "identity")


class NetworkFormatError(ValueError):
    """Malformed or inconsistent network description."""


@dataclass(frozen=True, eq=False)
class Layer:
    W: np.ndarray
    b: np.ndarray
    activation: str = "relu"

    def __post_init__(self):
        W = np.array(self.W, dtype=float)
        b = np.array(self.b, dtype=float).reshape(-1)
        if W.ndim != 2:
            raise NetworkFormatError(f"W must be 2-D, got shape {W.shape}")
        if self.activation not in ACTIVATIONS:
            raise NetworkFormatError(f"unknown activation {self.activation!r}")
        W.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "W", W)
        object.__setattr__(self, "b", b)

    @property
    def n_in(self) -> int:
        return self.W.shape[1]

    @property
    def n_out(self) -> int:
        return self.W.shape[0]


class NeuralNetwork:
    """A stack of affine layers, ReLU on hidden layers, identity on the output."""

    def __init__(self, layers: Sequence[Layer]):
        layers = tuple(layers)
        if not layers:
            raise NetworkFormatError("network must have at least one layer")
        for i, layer in enumerate(layers):
            if layer.b.shape[0] != layer.n_out:
                raise NetworkFormatError(
                    f"layer {i}: bias length {layer.b.shape[0]} != W rows {layer.n_out}"
                )
            if i > 0 and layer.n_in != layers[i - 1].n_out:
                raise NetworkFormatError(
                    f"layer {i}: expects {layer.n_in} inputs but layer {i - 1} "
                    f"produces {layers[i - 1].n_out}"
                )
        if layers[-1].activation != "identity":
            raise NetworkFormatError(f"layer {len(layers) - 1}: output layer must be identity")
        self.layers = layers

    @property
    def n_in(self) -> int:
        return self.layers[0].n_in

    @property
    def n_out(self) -> int:
        return self.layers[-1].n_out

    @property
    def hidden_sizes(self) -> list[int]:
        return [layer.n_out for layer in self.layers[:-1]]

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return forward(self, x)

    def __eq__(self, other) -> bool:
        if not isinstance(other, NeuralNetwork) or len(self.layers) != len(other.layers):
            return False
        return all(
            a.activation == b.activation
            and np.array_equal(a.W, b.W)
            and np.array_equal(a.b, b.b)
            for a, b in zip(self.layers, other.layers)
        )

    def __repr__(self) -> str:
        sizes = [self.n_in] + [layer.n_out for layer in self.layers]
        return f"NeuralNetwork(sizes={sizes})"

    def to_dict(self) -> dict:
        return {
            "layers": [
                {"W": layer.W.tolist(), "b": layer.b.tolist(), "act": layer.activation}
                for layer in self.layers
            ]
        }

    @classmethod
    def from_dict(cls, d: dict) -> NeuralNetwork:
        if "layers" not in d or not isinstance(d["layers"], list):
            raise NetworkFormatError("missing 'layers' list")
        layers = []
        for i, item in enumerate(d["layers"]):
            try:
                layers.append(Layer(item["W"], item["b"], item.get("act", "relu")))
            except (KeyError, TypeError, ValueError) as exc:
                raise NetworkFormatError(f"layer {i}: {exc}") from exc
        return cls(layers)


def _relu(z):
    return np.maximum(z, 0.0)


def forward(nn: NeuralNetwork, x: np.ndarray) -> np.ndarray:
    """Evaluate the network on one input (n,) or a batch (N, n)."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != nn.n_in:
        raise ValueError(f"input dimension {x.shape[-1]} != network input {nn.n_in}")
    h = x
    for layer in nn.layers:
        h = h @ layer.W.T + layer.b
        if layer.activation == "relu":
            h = _relu(h)
    return h


def save(nn: NeuralNetwork, path) -> None:
    # json writes floats with repr(), which round-trips doubles exactly
    Path(path).write_text(json.dumps(nn.to_dict()))


def load(path) -> NeuralNetwork:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise NetworkFormatError(f"{path}: not valid JSON ({exc})") from exc
    return NeuralNetwork.from_dict(data)


def with_output_clamp(nn: NeuralNetwork, lo, hi) -> NeuralNetwork:
    """Append two exact layers computing ``clip(nn(x), lo, hi)``.

    Uses clip(y) = relu(y - lo) - relu(y - hi) + lo, so the result is still a
    plain ReLU network whose outputs lie in [lo, hi] for every input.
    """
    lo = np.broadcast_to(np.asarray(lo, dtype=float), (nn.n_out,))
    hi = np.broadcast_to(np.asarray(hi, dtype=float), (nn.n_out,))
    last = nn.layers[-1]
    eye = np.eye(nn.n_out)
    hidden = Layer(
        np.vstack([last.W, last.W]),
        np.concatenate([last.b - lo, last.b - hi]),
        "relu",
    )
    out = Layer(np.hstack([eye, -eye]), lo.copy(), "identity")
    return NeuralNetwork(list(nn.layers[:-1]) + [hidden, out])


@dataclass
class Dataset:
    inputs: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.inputs = np.atleast_2d(np.asarray(self.inputs, dtype=float))
        self.labels = np.atleast_2d(np.asarray(self.labels, dtype=float))
        if self.inputs.shape[0] != self.labels.shape[0]:
            raise ValueError("inputs and labels must have equal length")

    def __len__(self) -> int:
        return self.inputs.shape[0]

    def split(self, frac: float, seed: int = 0) -> tuple[Dataset, Dataset]:
        idx = np.random.default_rng(seed).permutation(len(self))
        n = int(round(frac * len(self)))
        a, b = idx[:n], idx[n:]
        return Dataset(self.inputs[a], self.labels[a]), Dataset(self.inputs[b], self.labels[b])

    def save_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            n_x, n_u = self.inputs.shape[1], self.labels.shape[1]
            w.writerow([f"x{i}" for i in range(n_x)] + [f"u{j}" for j in range(n_u)])
            for x, u in zip(self.inputs, self.labels):
                w.writerow([repr(float(v)) for v in x] + [repr(float(v)) for v in u])

    @classmethod
    def load_csv(cls, path) -> Dataset:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        header, body = rows[0], rows[1:]
        n_x = sum(1 for h in header if h.startswith("x"))
        arr = np.array(body, dtype=float)
        return cls(arr[:, :n_x], arr[:, n_x:])


def init_network(sizes: Sequence[int], rng: np.random.Generator) -> NeuralNetwork:
    """Glorot-uniform weights, zero biases."""
    layers = []
    for i, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        limit = np.sqrt(6.0 / (n_in + n_out))
        W = rng.uniform(-limit, limit, size=(n_out, n_in))
        act = "identity" if i == len(sizes) - 2 else "relu"
        layers.append(Layer(W, np.zeros(n_out), act))
    return NeuralNetwork(layers)


def mse(nn: NeuralNetwork, data: Dataset) -> np.ndarray:
    """Per-output mean squared error."""
    return np.mean((forward(nn, data.inputs) - data.labels) ** 2, axis=0)


def mse_and_grads(
    Ws: list[np.ndarray], bs: list[np.ndarray], acts: list[str], X: np.ndarray, Y: np.ndarray
) -> tuple[float, list[np.ndarray], list[np.ndarray]]:
    """Loss = mean over samples of the summed squared error, with its gradients."""
    hs = [X]
    zs = []
    h = X
    for W, b, act in zip(Ws, bs, acts):
        z = h @ W.T + b
        zs.append(z)
        h = _relu(z) if act == "relu" else z
        hs.append(h)
    n = X.shape[0]
    err = h - Y
    loss = float(np.sum(err**2) / n)
    delta = 2.0 * err / n
    gWs = [None] * len(Ws)
    gbs = [None] * len(Ws)
    for i in range(len(Ws) - 1, -1, -1):
        if acts[i] == "relu":
            delta = delta * (zs[i] > 0)
        gWs[i] = delta.T @ hs[i]
        gbs[i] = delta.sum(axis=0)
        if i > 0:
            delta = delta @ Ws[i]
    return loss, gWs, gbs


def train_regression(
    data: Dataset,
    hidden: Sequence[int],
    epochs: int = 20,
    batch: int = 32,
    seed: int = 0,
    lr: float = 1e-2,
) -> NeuralNetwork:
    """Fit a ReLU network to ``data`` by mini-batch SGD on the squared error.

    Deterministic for a fixed seed: the same generator drives weight
    initialization and the per-epoch shuffles.
    """
    if len(data) == 0:
        raise ValueError("dataset is empty")
    rng = np.random.default_rng(seed)
    sizes = [data.inputs.shape[1], *hidden, data.labels.shape[1]]
    net = init_network(sizes, rng)
    Ws = [layer.W.copy() for layer in net.layers]
    bs = [layer.b.copy() for layer in net.layers]
    acts = [layer.activation for layer in net.layers]
    X, Y = data.inputs, data.labels
    n = len(data)
    for _ in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch):
            idx = order[start:start + batch]
            _, gWs, gbs = mse_and_grads(Ws, bs, acts, X[idx], Y[idx])
            for i in range(len(Ws)):
                Ws[i] -= lr * gWs[i]
                bs[i] -= lr * gbs[i]
    return NeuralNetwork([Layer(W, b, a) for W, b, a in zip(Ws, bs, acts)])
