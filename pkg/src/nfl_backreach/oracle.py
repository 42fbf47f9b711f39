"""Monte-Carlo ground truth, conservativeness error and soundness audits."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .backreach import BackreachResult, iterated_backreach_hull
from .dynamics import LinearSystem, rollout_batch
from .geometry import HyperRectangle, union_contains_points
from .network import NeuralNetwork

CHUNK = 50_000


class UndefinedError(ValueError):
    """The error metric is undefined for a zero-area true set."""


@dataclass
class TrueBpEstimate:
    """Bounding boxes of sampled states that reach the target after t steps."""

    rects: list[HyperRectangle | None]
    hits: list[int]
    n_samples: int
    seed: int
    region: HyperRectangle

    def areas(self) -> list[float | None]:
        return [None if r is None else r.volume() for r in self.rects]

    def to_dict(self) -> dict:
        return {
            "rects": [None if r is None else r.to_dict() for r in self.rects],
            "hits": self.hits,
            "n_samples": self.n_samples,
            "seed": self.seed,
            "region": self.region.to_dict(),
        }


def _chunks(rng: np.random.Generator, region: HyperRectangle, n: int):
    # sample i is the same for every n >= i: draws come from one stream in order
    done = 0
    while done < n:
        k = min(CHUNK, n - done)
        yield region.sample(rng, k)
        done += k


def mc_true_bp(
    sys: LinearSystem,
    nn: NeuralNetwork,
    target: HyperRectangle,
    tau: int,
    sample_region: HyperRectangle | None = None,
    n_samples: int = 100_000,
    seed: int = 0,
    attribution: str = "all",
) -> TrueBpEstimate:
    """Estimate the true backprojection sets by uniform sampling and rollout.

    ``attribution="all"`` records a sample at every step t where its rollout
    is inside ``target``; ``"first"`` records it only at the first such t >= 1.
    The default region is the bounding box of the policy-independent
    backreachable boxes over ``tau`` steps.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    if attribution not in ("all", "first"):
        raise ValueError(f"unknown attribution {attribution!r}")
    region = sample_region or iterated_backreach_hull(sys, target, tau)
    rng = np.random.default_rng(seed)
    lo = np.full((tau + 1, target.dim), np.inf)
    hi = np.full((tau + 1, target.dim), -np.inf)
    hits = np.zeros(tau + 1, dtype=int)
    for X in _chunks(rng, region, n_samples):
        traj = rollout_batch(sys, nn, X, tau)
        seen = np.zeros(X.shape[0], dtype=bool)
        for t in range(tau + 1):
            m = target.contains_points(traj[t], tol=0.0)
            if attribution == "first" and t > 0:
                m &= ~seen
                seen |= m
            if m.any():
                hits[t] += int(m.sum())
                lo[t] = np.minimum(lo[t], X[m].min(axis=0))
                hi[t] = np.maximum(hi[t], X[m].max(axis=0))
    rects = [HyperRectangle(lo[t], hi[t]) if hits[t] else None for t in range(tau + 1)]
    return TrueBpEstimate(rects, hits.tolist(), n_samples, seed, region)


def approx_error(a_true: float, a_bpe: float) -> float:
    """Relative area excess (a_bpe - a_true) / a_true; positive when conservative."""
    if not a_true > 0:
        raise UndefinedError(f"true area must be positive, got {a_true}")
    return (a_bpe - a_true) / a_true


def step_errors(result: BackreachResult, truth: TrueBpEstimate) -> list[float | None]:
    """Per-step error of the estimate's bounding box against the sampled truth."""
    out = []
    for t, hull in enumerate(result.hulls):
        a_true = truth.rects[t].volume() if t < len(truth.rects) and truth.rects[t] is not None else 0.0
        a_bpe = 0.0 if hull is None else hull.volume()
        try:
            out.append(approx_error(a_true, a_bpe))
        except UndefinedError:
            out.append(None)
    return out


@dataclass
class AuditReport:
    violations: int
    violating_states: list[tuple[int, list[float]]] = field(default_factory=list)
    hits_checked: int = 0
    n_samples: int = 0
    seed: int = 0
    region: HyperRectangle | None = None

    @property
    def sound(self) -> bool:
        return self.violations == 0

    def to_dict(self) -> dict:
        return {
            "violations": self.violations,
            "violating_states": [{"step": t, "x": x} for t, x in self.violating_states],
            "hits_checked": self.hits_checked,
            "n_samples": self.n_samples,
            "seed": self.seed,
            "region": None if self.region is None else self.region.to_dict(),
        }


def soundness_audit(
    result: BackreachResult,
    sys: LinearSystem,
    nn: NeuralNetwork,
    target: HyperRectangle,
    n_samples: int = 100_000,
    seed: int = 0,
    region: HyperRectangle | None = None,
    tol: float = 1e-9,
    max_listed: int = 100,
) -> AuditReport:
    """Check that every sampled state reaching ``target`` at step t lies in ``bp_sets[t]``."""
    tau = result.tau
    region = region or iterated_backreach_hull(sys, target, tau)
    rng = np.random.default_rng(seed)
    violations = 0
    checked = 0
    listed: list[tuple[int, list[float]]] = []
    for X in _chunks(rng, region, n_samples):
        traj = rollout_batch(sys, nn, X, tau)
        for t in range(1, tau + 1):
            m = target.contains_points(traj[t], tol=0.0)
            if not m.any():
                continue
            pts = X[m]
            checked += pts.shape[0]
            bad = ~union_contains_points(result.bp_sets[t], pts, tol)
            violations += int(bad.sum())
            for x in pts[bad][: max(0, max_listed - len(listed))]:
                listed.append((t, x.tolist()))
    return AuditReport(violations, listed, checked, n_samples, seed, region)
