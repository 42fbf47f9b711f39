"""Axis-aligned boxes and finite unions of boxes.

Every set handled by the reachability code (targets, initial sets,
backreachable bounds, backprojection estimates) is either a
:class:`HyperRectangle` or a :class:`RectUnion` of them.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

MEMBERSHIP_TOL = 1e-9


class EmptySetError(ValueError):
    """Raised when an operation needs a nonempty set but got the empty one."""


@dataclass(frozen=True, eq=False)
class HyperRectangle:
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.array(self.lo, dtype=float).reshape(-1)
        hi = np.array(self.hi, dtype=float).reshape(-1)
        if lo.shape != hi.shape:
            raise ValueError(f"lo/hi shape mismatch: {lo.shape} vs {hi.shape}")
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise ValueError("rectangle bounds must be finite")
        if np.any(lo > hi):
            raise ValueError(f"lo must be <= hi elementwise, got lo={lo}, hi={hi}")
        lo.setflags(write=False)
        hi.setflags(write=False)
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @classmethod
    def from_center(cls, center, radius) -> HyperRectangle:
        """The l-infinity ball with the given center and per-axis radius."""
        center = np.asarray(center, dtype=float)
        radius = np.broadcast_to(np.asarray(radius, dtype=float), center.shape)
        if np.any(radius < 0):
            raise ValueError("radius must be nonnegative")
        return cls(center - radius, center + radius)

    @classmethod
    def point(cls, x) -> HyperRectangle:
        return cls(x, x)

    @property
    def dim(self) -> int:
        return self.lo.shape[0]

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lo + self.hi)

    @property
    def width(self) -> np.ndarray:
        return self.hi - self.lo

    def volume(self) -> float:
        return float(np.prod(self.hi - self.lo))

    def contains(self, x, tol: float = MEMBERSHIP_TOL) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all(x >= self.lo - tol) and np.all(x <= self.hi + tol))

    def contains_points(self, xs: np.ndarray, tol: float = MEMBERSHIP_TOL) -> np.ndarray:
        """Vectorized membership for an (N, n) array of points."""
        xs = np.asarray(xs, dtype=float)
        return np.all((xs >= self.lo - tol) & (xs <= self.hi + tol), axis=1)

    def contains_rect(self, other: HyperRectangle, tol: float = MEMBERSHIP_TOL) -> bool:
        return bool(np.all(other.lo >= self.lo - tol) and np.all(other.hi <= self.hi + tol))

    def intersects(self, other: HyperRectangle) -> bool:
        _check_dims(self, other)
        return bool(np.all(self.lo <= other.hi) and np.all(other.lo <= self.hi))

    def intersection(self, other: HyperRectangle) -> HyperRectangle | None:
        lo = np.maximum(self.lo, other.lo)
        hi = np.minimum(self.hi, other.hi)
        if np.any(lo > hi):
            return None
        return HyperRectangle(lo, hi)

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return rng.uniform(self.lo, self.hi, size=(n, self.dim))

    def __eq__(self, other) -> bool:
        if not isinstance(other, HyperRectangle):
            return NotImplemented
        return bool(np.array_equal(self.lo, other.lo) and np.array_equal(self.hi, other.hi))

    def __hash__(self):
        return hash((self.lo.tobytes(), self.hi.tobytes()))

    def __repr__(self) -> str:
        return f"HyperRectangle(lo={self.lo.tolist()}, hi={self.hi.tolist()})"

    def to_dict(self) -> dict:
        return {"lo": self.lo.tolist(), "hi": self.hi.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> HyperRectangle:
        return cls(d["lo"], d["hi"])


@dataclass(frozen=True)
class RectUnion:
    """A finite, possibly overlapping union of boxes. No members means empty."""

    members: tuple[HyperRectangle, ...] = field(default_factory=tuple)

    def __post_init__(self):
        members = tuple(self.members)
        if members:
            n = members[0].dim
            if any(m.dim != n for m in members):
                raise ValueError("all union members must share one dimension")
        object.__setattr__(self, "members", members)

    @classmethod
    def of(cls, rects: Iterable[HyperRectangle]) -> RectUnion:
        return cls(tuple(rects))

    @property
    def is_empty(self) -> bool:
        return not self.members

    def __len__(self) -> int:
        return len(self.members)

    def __iter__(self):
        return iter(self.members)

    def to_list(self) -> list[dict]:
        return [m.to_dict() for m in self.members]

    @classmethod
    def from_list(cls, items: Sequence[dict]) -> RectUnion:
        return cls(tuple(HyperRectangle.from_dict(d) for d in items))


def _check_dims(a: HyperRectangle, b: HyperRectangle) -> None:
    if a.dim != b.dim:
        raise ValueError(f"dimension mismatch: {a.dim} vs {b.dim}")


def partition(rect: HyperRectangle, r: Sequence[int]) -> list[HyperRectangle]:
    """Split ``rect`` into a uniform grid with ``r[k]`` cells along axis k.

    Cell edges are taken from ``np.linspace`` so adjacent cells share exact
    boundaries and the outermost edges equal ``rect``'s bounds bit for bit.
    """
    r = [int(v) for v in r]
    if len(r) != rect.dim:
        raise ValueError(f"partition counts {r} do not match dimension {rect.dim}")
    if any(v < 1 for v in r):
        raise ValueError(f"partition counts must be >= 1, got {r}")
    edges = []
    for k, n in enumerate(r):
        e = np.linspace(rect.lo[k], rect.hi[k], n + 1)
        e[0], e[-1] = rect.lo[k], rect.hi[k]
        edges.append(e)
    cells = []
    for idx in itertools.product(*(range(n) for n in r)):
        lo = [edges[k][i] for k, i in enumerate(idx)]
        hi = [edges[k][i + 1] for k, i in enumerate(idx)]
        cells.append(HyperRectangle(lo, hi))
    return cells


def bound_with_rectangle(u: RectUnion | Iterable[HyperRectangle]) -> HyperRectangle:
    """Tightest box containing every member of the union.

    Raises :class:`EmptySetError` for the empty union; callers treat that as
    "nothing reaches the target" rather than as a failure.
    """
    members = u.members if isinstance(u, RectUnion) else tuple(u)
    if not members:
        raise EmptySetError("cannot bound an empty union")
    lo = np.min(np.stack([m.lo for m in members]), axis=0)
    hi = np.max(np.stack([m.hi for m in members]), axis=0)
    return HyperRectangle(lo, hi)


def intersects(a: HyperRectangle, b: HyperRectangle) -> bool:
    return a.intersects(b)


def union_intersects(u: RectUnion, b: HyperRectangle) -> bool:
    return any(m.intersects(b) for m in u.members)


def volume(rect: HyperRectangle) -> float:
    return rect.volume()


def contains(rect: HyperRectangle, x, tol: float = MEMBERSHIP_TOL) -> bool:
    return rect.contains(x, tol)


def union_contains(u: RectUnion, x, tol: float = MEMBERSHIP_TOL) -> bool:
    return any(m.contains(x, tol) for m in u.members)


def union_contains_points(u: RectUnion, xs: np.ndarray, tol: float = MEMBERSHIP_TOL) -> np.ndarray:
    xs = np.asarray(xs, dtype=float)
    inside = np.zeros(xs.shape[0], dtype=bool)
    for m in u.members:
        inside |= m.contains_points(xs, tol)
    return inside
