"""Affine output bounds for ReLU networks over a box (CROWN-style backward pass).

For an input box X the result holds, for every x in X and output j,

    Phi[j] @ x + beta[j] <= nn(x)[j] <= Psi[j] @ x + alpha[j]

Intermediate pre-activation intervals are themselves computed by running the
same backward pass on each truncated sub-network, which is tighter than
interval arithmetic at quadratic cost in depth.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import HyperRectangle
from .network import NeuralNetwork

LOWER_SLOPE_RULES = ("adaptive", "zero", "one")


@dataclass(frozen=True, eq=False)
class AffineBounds:
    Psi: np.ndarray
    alpha: np.ndarray
    Phi: np.ndarray
    beta: np.ndarray
    domain: HyperRectangle

    def upper(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x) @ self.Psi.T + self.alpha

    def lower(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x) @ self.Phi.T + self.beta

    def output_interval(self) -> tuple[np.ndarray, np.ndarray]:
        """Constant bounds on the output implied by the affine bounds over the domain."""
        return _concretize(self.Phi, self.beta, self.Psi, self.alpha, self.domain)

    def to_dict(self) -> dict:
        return {
            "Psi": self.Psi.tolist(),
            "alpha": self.alpha.tolist(),
            "Phi": self.Phi.tolist(),
            "beta": self.beta.tolist(),
            "domain": self.domain.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> AffineBounds:
        return cls(
            np.asarray(d["Psi"], dtype=float),
            np.asarray(d["alpha"], dtype=float),
            np.asarray(d["Phi"], dtype=float),
            np.asarray(d["beta"], dtype=float),
            HyperRectangle.from_dict(d["domain"]),
        )


@dataclass(frozen=True)
class LayerBounds:
    """Pre-activation intervals, one (lower, upper) pair per layer."""

    lower: tuple[np.ndarray, ...]
    upper: tuple[np.ndarray, ...]

    def __len__(self) -> int:
        return len(self.lower)


def _concretize(A_l, b_l, A_u, b_u, box: HyperRectangle):
    lo = np.clip(A_l, 0, None) @ box.lo + np.clip(A_l, None, 0) @ box.hi + b_l
    hi = np.clip(A_u, 0, None) @ box.hi + np.clip(A_u, None, 0) @ box.lo + b_u
    return lo, hi


def _relu_lines(l: np.ndarray, u: np.ndarray, rule: str):
    """Slopes/intercepts of the upper and lower linear ReLU relaxations."""
    up_slope = np.zeros_like(l)
    up_icpt = np.zeros_like(l)
    lo_slope = np.zeros_like(l)
    active = l >= 0
    # l == u == 0 counts as inactive: the zero map is exact there
    active &= u > 0
    up_slope[active] = 1.0
    lo_slope[active] = 1.0
    unstable = (l < 0) & (u > 0)
    lu, uu = l[unstable], u[unstable]
    up_slope[unstable] = uu / (uu - lu)
    up_icpt[unstable] = -lu * uu / (uu - lu)
    if rule == "adaptive":
        lo_slope[unstable] = (uu >= np.abs(lu)).astype(float)
    elif rule == "one":
        lo_slope[unstable] = 1.0
    elif rule != "zero":
        raise ValueError(f"unknown lower-slope rule {rule!r}")
    return up_slope, up_icpt, lo_slope


def _backward(nn: NeuralNetwork, k: int, pre: list, rule: str):
    """Linear bounds of layer k's pre-activation as functions of the input."""
    layers = nn.layers
    A_u = layers[k].W.copy()
    A_l = layers[k].W.copy()
    b_u = layers[k].b.copy()
    b_l = layers[k].b.copy()
    for j in range(k - 1, -1, -1):
        # x^{j+1} = act(z^j), z^j = W_j x^j + b_j
        if layers[j].activation == "relu":
            l, u = pre[j]
            s_up, c_up, s_lo = _relu_lines(l, u, rule)
            pos_u, neg_u = np.clip(A_u, 0, None), np.clip(A_u, None, 0)
            pos_l, neg_l = np.clip(A_l, 0, None), np.clip(A_l, None, 0)
            b_u = b_u + pos_u @ c_up
            b_l = b_l + neg_l @ c_up
            A_u = pos_u * s_up + neg_u * s_lo
            A_l = pos_l * s_lo + neg_l * s_up
        b_u = b_u + A_u @ layers[j].b
        b_l = b_l + A_l @ layers[j].b
        A_u = A_u @ layers[j].W
        A_l = A_l @ layers[j].W
    return A_l, b_l, A_u, b_u


def _check_domain(nn: NeuralNetwork, domain: HyperRectangle) -> None:
    if domain.dim != nn.n_in:
        raise ValueError(f"domain dimension {domain.dim} != network input {nn.n_in}")


def _all_preactivation_bounds(nn, domain, rule):
    pre = []
    for k in range(len(nn.layers)):
        A_l, b_l, A_u, b_u = _backward(nn, k, pre, rule)
        lo, hi = _concretize(A_l, b_l, A_u, b_u, domain)
        pre.append((lo, hi))
    return pre


def preactivation_bounds(
    nn: NeuralNetwork, domain: HyperRectangle, rule: str = "adaptive"
) -> LayerBounds:
    _check_domain(nn, domain)
    pre = _all_preactivation_bounds(nn, domain, rule)
    return LayerBounds(tuple(p[0] for p in pre), tuple(p[1] for p in pre))


def relax(nn: NeuralNetwork, domain: HyperRectangle, rule: str = "adaptive") -> AffineBounds:
    """Affine lower/upper bounds (Phi, beta) / (Psi, alpha) on nn over ``domain``."""
    _check_domain(nn, domain)
    if rule not in LOWER_SLOPE_RULES:
        raise ValueError(f"unknown lower-slope rule {rule!r}")
    pre = []
    L = len(nn.layers)
    for k in range(L - 1):
        A_l, b_l, A_u, b_u = _backward(nn, k, pre, rule)
        pre.append(_concretize(A_l, b_l, A_u, b_u, domain))
    A_l, b_l, A_u, b_u = _backward(nn, L - 1, pre, rule)
    return AffineBounds(Psi=A_u, alpha=b_u, Phi=A_l, beta=b_l, domain=domain)
