"""Backprojection-set over-approximation for linear plants under ReLU policies.

Sets are indexed by the number of steps remaining before the target: index 0
is the target itself and index t holds states that may reach it in exactly t
steps. All estimates are unions of boxes; each recursion step consumes the
bounding box of the previous union.
"""

from __future__ import annotations

import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .dynamics import LinearSystem
from .geometry import EmptySetError, HyperRectangle, RectUnion, bound_with_rectangle, partition
from .lp import FEAS_TOL, LinearProgram, SolverFailure, Status, solve
from .network import NeuralNetwork
from .relaxation import AffineBounds, relax

THREADS_ENV = "NFL_BACKREACH_THREADS"


@dataclass(frozen=True)
class BackreachOptions:
    # intersect [pi_L(x), pi_U(x)] with the control limits inside the LPs
    clip_control_bounds: bool = False
    # refinement constrains only the next step instead of the whole chain
    single_step_refinement: bool = False
    lower_slope: str = "adaptive"
    threads: int | None = None

    def n_threads(self) -> int:
        if self.threads is not None:
            return max(1, int(self.threads))
        return max(1, int(os.environ.get(THREADS_ENV, "1") or 1))


DEFAULT_OPTIONS = BackreachOptions()


@dataclass
class BackreachResult:
    algorithm: str
    bp_sets: list[RectUnion]
    hulls: list[HyperRectangle | None]
    omega: list[AffineBounds | None]
    lp_solves: int
    backreach_lp_solves: int = 0
    backreach_rects: list[HyperRectangle | None] = field(default_factory=list)
    wall_clock: float = 0.0
    # first-pass result a refinement was built from; not serialized
    base: BackreachResult | None = field(default=None, repr=False, compare=False)

    @property
    def tau(self) -> int:
        return len(self.bp_sets) - 1

    @property
    def target(self) -> HyperRectangle:
        return self.bp_sets[0].members[0]

    def hull_areas(self) -> list[float]:
        return [0.0 if h is None else h.volume() for h in self.hulls]

    def to_dict(self) -> dict:
        return {
            "algorithm": self.algorithm,
            "bp_sets": [u.to_list() for u in self.bp_sets],
            "hulls": [None if h is None else h.to_dict() for h in self.hulls],
            "omega": [None if o is None else o.to_dict() for o in self.omega],
            "lp_solves": self.lp_solves,
            "backreach_lp_solves": self.backreach_lp_solves,
            "backreach_rects": [None if r is None else r.to_dict() for r in self.backreach_rects],
            "wall_clock": self.wall_clock,
        }

    @classmethod
    def from_dict(cls, d: dict) -> BackreachResult:
        return cls(
            algorithm=d["algorithm"],
            bp_sets=[RectUnion.from_list(u) for u in d["bp_sets"]],
            hulls=[None if h is None else HyperRectangle.from_dict(h) for h in d["hulls"]],
            omega=[None if o is None else AffineBounds.from_dict(o) for o in d["omega"]],
            lp_solves=int(d["lp_solves"]),
            backreach_lp_solves=int(d.get("backreach_lp_solves", 0)),
            backreach_rects=[
                None if r is None else HyperRectangle.from_dict(r) for r in d.get("backreach_rects", [])
            ],
            wall_clock=float(d.get("wall_clock", 0.0)),
        )


@dataclass(frozen=True)
class SafetyVerdict:
    certified: bool
    first_unsafe_step: int | None = None
    witness: HyperRectangle | None = None

    def __post_init__(self):
        if self.certified != (self.first_unsafe_step is None):
            raise ValueError("certified iff no unsafe step")

    def to_dict(self) -> dict:
        return {
            "certified": self.certified,
            "first_unsafe_step": self.first_unsafe_step,
            "witness": None if self.witness is None else self.witness.to_dict(),
        }


def _pmap(fn: Callable, items: Sequence, threads: int) -> list:
    if threads <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def _face_lps(p: LinearProgram, obj_rows: np.ndarray, obj_const: np.ndarray):
    """Solve min and max of each objective row over the feasible set of ``p``.

    Returns (lo, hi, n_solved, any_feasible, failures). Every LP is solved even
    when an earlier one is infeasible, so solver-call counts are exact.
    """
    n = obj_rows.shape[0]
    lo = np.full(n, np.nan)
    hi = np.full(n, np.nan)
    failures = []
    feasible = False
    for k in range(n):
        for sense, out in (("minimize", lo), ("maximize", hi)):
            sol = solve(p.with_objective(obj_rows[k], sense))
            if sol.status is Status.OPTIMAL:
                out[k] = sol.value + obj_const[k]
                feasible = True
            elif sol.status is not Status.INFEASIBLE:
                failures.append((k, sense, sol.status.value, sol.message))
    return lo, hi, 2 * n, feasible, failures


def _widen_into(lo, hi, cell: HyperRectangle | None) -> HyperRectangle:
    """Widen LP optima by the solver tolerance, optionally clipped to ``cell``.

    Faces whose LP came back infeasible while a sibling LP was optimal fall
    back to the cell face (conservative).
    """
    lo = np.asarray(lo, dtype=float).copy()
    hi = np.asarray(hi, dtype=float).copy()
    if cell is not None:
        lo = np.where(np.isnan(lo), cell.lo, lo - FEAS_TOL)
        hi = np.where(np.isnan(hi), cell.hi, hi + FEAS_TOL)
        lo = np.clip(lo, cell.lo, cell.hi)
        hi = np.clip(hi, cell.lo, cell.hi)
    else:
        lo, hi = lo - FEAS_TOL, hi + FEAS_TOL
    hi = np.maximum(hi, lo)
    return HyperRectangle(lo, hi)


def _control_bounds(sys: LinearSystem, clip: bool):
    if clip:
        return sys.control_lo, sys.control_hi
    return np.full(sys.n_u, -np.inf), np.full(sys.n_u, np.inf)


def _relaxation_rows(bounds: AffineBounds, x_cols: slice, u_cols: slice, n_vars: int):
    """Rows encoding Phi x + beta <= u <= Psi x + alpha."""
    n_u = bounds.Psi.shape[0]
    eye = np.eye(n_u)
    lower = np.zeros((n_u, n_vars))
    lower[:, x_cols] = bounds.Phi
    lower[:, u_cols] = -eye
    upper = np.zeros((n_u, n_vars))
    upper[:, x_cols] = -bounds.Psi
    upper[:, u_cols] = eye
    return np.vstack([lower, upper]), np.concatenate([-bounds.beta, bounds.alpha])


def _next_state_rows(sys: LinearSystem, target: HyperRectangle, n_vars: int):
    """Rows encoding target.lo <= A x + B u + c <= target.hi for z = [x, u, ...]."""
    n_x, n_u = sys.n_x, sys.n_u
    M = np.zeros((n_x, n_vars))
    M[:, :n_x] = sys.A
    M[:, n_x:n_x + n_u] = sys.B
    return np.vstack([M, -M]), np.concatenate([target.hi - sys.c, -(target.lo - sys.c)])


def backreach_lp(sys: LinearSystem, target: HyperRectangle) -> LinearProgram:
    """Feasible set {(x, u): A x + B u + c in target, u in U}, objective unset."""
    n_x, n_u = sys.n_x, sys.n_u
    n = n_x + n_u
    A_ub, b_ub = _next_state_rows(sys, target, n)
    lb = np.concatenate([np.full(n_x, -np.inf), sys.control_lo])
    ub = np.concatenate([np.full(n_x, np.inf), sys.control_hi])
    return LinearProgram(np.zeros(n), "minimize", A_ub, b_ub, lb=lb, ub=ub)


def _state_objectives(n_x: int, n_vars: int, offset: int = 0) -> np.ndarray:
    rows = np.zeros((n_x, n_vars))
    rows[:, offset:offset + n_x] = np.eye(n_x)
    return rows


def backreach_rect(sys: LinearSystem, target: HyperRectangle) -> HyperRectangle | None:
    """Box bounding every state that some admissible control moves into ``target``.

    Returns None when no state can reach the target in one step.
    """
    rect, _ = _backreach_rect_counted(sys, target)
    return rect


def _backreach_rect_counted(sys, target):
    if target.dim != sys.n_x:
        raise ValueError(f"target dimension {target.dim} != state dimension {sys.n_x}")
    p = backreach_lp(sys, target)
    objs = _state_objectives(sys.n_x, p.n_vars)
    lo, hi, n, feasible, failures = _face_lps(p, objs, np.zeros(sys.n_x))
    if failures:
        raise SolverFailure(f"backreachable-set LP failed: {failures}")
    if not feasible:
        return None, n
    if np.any(np.isnan(lo)) or np.any(np.isnan(hi)):
        raise SolverFailure("backreachable-set LPs disagree on feasibility")
    return _widen_into(lo, hi, None), n


def one_step_lp(
    sys: LinearSystem,
    target: HyperRectangle,
    bounds: AffineBounds,
    cell: HyperRectangle,
    clip_controls: bool = False,
) -> LinearProgram:
    """Feasible set {(x, u): A x + B u + c in target, Phi x + beta <= u <= Psi x + alpha, x in cell}."""
    n_x, n_u = sys.n_x, sys.n_u
    n = n_x + n_u
    T_rows, T_rhs = _next_state_rows(sys, target, n)
    R_rows, R_rhs = _relaxation_rows(bounds, slice(0, n_x), slice(n_x, n), n)
    u_lo, u_hi = _control_bounds(sys, clip_controls)
    return LinearProgram(
        np.zeros(n),
        "minimize",
        np.vstack([T_rows, R_rows]),
        np.concatenate([T_rhs, R_rhs]),
        lb=np.concatenate([cell.lo, u_lo]),
        ub=np.concatenate([cell.hi, u_hi]),
    )


def _cell_box(p: LinearProgram, objs, cell: HyperRectangle, where: str):
    lo, hi, n, feasible, failures = _face_lps(p, objs, np.zeros(objs.shape[0]))
    if failures:
        raise SolverFailure(f"LP failed for {where} cell {cell}: {failures}")
    if not feasible:
        return None, n
    return _widen_into(lo, hi, cell), n


def _one_step(sys, nn, target, r, opts: BackreachOptions):
    """(union, backreachable box, BP LP count, backreach LP count)."""
    R, n_br = _backreach_rect_counted(sys, target)
    if R is None:
        return RectUnion(), None, 0, n_br
    cells = partition(R, r)

    def work(cell):
        bounds = relax(nn, cell, opts.lower_slope)
        p = one_step_lp(sys, target, bounds, cell, opts.clip_control_bounds)
        return _cell_box(p, _state_objectives(sys.n_x, p.n_vars), cell, "one-step")

    out = _pmap(work, cells, opts.n_threads())
    members = [box for box, _ in out if box is not None]
    return RectUnion.of(members), R, sum(n for _, n in out), n_br


def one_step_backproj(
    sys: LinearSystem,
    nn: NeuralNetwork,
    target: HyperRectangle,
    r: Sequence[int],
    options: BackreachOptions = DEFAULT_OPTIONS,
) -> RectUnion:
    """Union of boxes containing every state the policy drives into ``target`` in one step."""
    union, _, _, _ = _one_step(sys, nn, target, r, options)
    return union


def _check_inputs(sys, nn, target, tau, r):
    if tau < 1:
        raise ValueError("tau must be >= 1")
    if target.dim != sys.n_x or nn.n_in != sys.n_x or nn.n_out != sys.n_u:
        raise ValueError("system, policy and target dimensions are inconsistent")
    if len(r) != sys.n_x:
        raise ValueError(f"partition vector {list(r)} does not match state dimension {sys.n_x}")


def breach_lp(
    sys: LinearSystem,
    nn: NeuralNetwork,
    target: HyperRectangle,
    tau: int,
    r: Sequence[int],
    options: BackreachOptions = DEFAULT_OPTIONS,
) -> BackreachResult:
    """Recursive one-step backprojection over ``tau`` steps.

    Each step backprojects the bounding box of the previous estimate, then
    stores the policy relaxation over the new estimate's bounding box for
    reuse by :func:`rebreach_lp`. Stops early once an estimate is empty.
    """
    _check_inputs(sys, nn, target, tau, r)
    t0 = time.perf_counter()
    bp_sets = [RectUnion((target,))]
    hulls: list[HyperRectangle | None] = [target]
    omega: list[AffineBounds | None] = []
    rects: list[HyperRectangle | None] = [None]
    n_lp = n_br = 0
    for t in range(1, tau + 1):
        prev = bp_sets[-1]
        if prev.is_empty:
            bp_sets.append(RectUnion())
            hulls.append(None)
            omega.append(None)
            rects.append(None)
            continue
        union, R, k, kb = _one_step(sys, nn, bound_with_rectangle(prev), r, options)
        n_lp += k
        n_br += kb
        bp_sets.append(union)
        rects.append(R)
        if union.is_empty:
            hulls.append(None)
            omega.append(None)
        else:
            hull = bound_with_rectangle(union)
            hulls.append(hull)
            omega.append(relax(nn, hull, options.lower_slope))
    return BackreachResult(
        "breach", bp_sets, hulls, omega, n_lp, n_br, rects, time.perf_counter() - t0
    )


def chained_lp(
    sys: LinearSystem,
    target: HyperRectangle,
    steps: int,
    cell: HyperRectangle,
    cell_bounds: AffineBounds,
    hulls: Sequence[HyperRectangle],
    omega: Sequence[AffineBounds],
    clip_controls: bool = False,
) -> LinearProgram:
    """Multi-step feasible set for states in ``cell`` that reach ``target`` in ``steps`` steps.

    Decision vector z = [x_s, u_s, x_{s-1}, u_{s-1}, ..., x_1, u_1, x_0] with
    s = ``steps`` counting steps remaining. Constraints: exact dynamics between
    consecutive states, x_s in ``cell`` with ``cell_bounds`` on u_s, and for
    0 < j < s the intermediate state x_j in ``hulls[j]`` with ``omega[j]``
    bounding u_j; x_0 in ``target``. The first n_x entries of z are x_s.
    """
    n_x, n_u = sys.n_x, sys.n_u
    blk = n_x + n_u
    n = steps * blk + n_x

    def xcol(j):
        i = (steps - j) * blk
        return slice(i, i + n_x)

    def ucol(j):
        i = (steps - j) * blk + n_x
        return slice(i, i + n_u)

    A_eq = np.zeros((steps * n_x, n))
    b_eq = np.zeros(steps * n_x)
    for row, j in enumerate(range(steps, 0, -1)):
        rs = slice(row * n_x, (row + 1) * n_x)
        A_eq[rs, xcol(j)] = sys.A
        A_eq[rs, ucol(j)] = sys.B
        A_eq[rs, xcol(j - 1)] = -np.eye(n_x)
        b_eq[rs] = -sys.c

    rows, rhs = [], []
    R, b = _relaxation_rows(cell_bounds, xcol(steps), ucol(steps), n)
    rows.append(R)
    rhs.append(b)
    for j in range(1, steps):
        R, b = _relaxation_rows(omega[j], xcol(j), ucol(j), n)
        rows.append(R)
        rhs.append(b)

    lb = np.full(n, -np.inf)
    ub = np.full(n, np.inf)
    lb[xcol(steps)], ub[xcol(steps)] = cell.lo, cell.hi
    for j in range(1, steps):
        lb[xcol(j)], ub[xcol(j)] = hulls[j].lo, hulls[j].hi
    lb[xcol(0)], ub[xcol(0)] = target.lo, target.hi
    if clip_controls:
        for j in range(1, steps + 1):
            lb[ucol(j)], ub[ucol(j)] = sys.control_lo, sys.control_hi
    names = []
    for j in range(steps, 0, -1):
        names += [f"x{j}_{i}" for i in range(n_x)] + [f"u{j}_{i}" for i in range(n_u)]
    names += [f"x0_{i}" for i in range(n_x)]
    return LinearProgram(np.zeros(n), "minimize", np.vstack(rows), np.concatenate(rhs), A_eq, b_eq, lb, ub, names)


def rebreach_lp(
    sys: LinearSystem,
    nn: NeuralNetwork,
    target: HyperRectangle,
    tau: int,
    r: Sequence[int],
    options: BackreachOptions = DEFAULT_OPTIONS,
    base: BackreachResult | None = None,
) -> BackreachResult:
    """Refine the estimates of :func:`breach_lp` with multi-step LPs.

    For every step t >= 2 the bounding box of the first-pass estimate is
    re-partitioned and each cell is bounded subject to the whole chain of
    later first-pass boxes, stored relaxations and the target. The one-step
    estimate is kept as is. ``base`` reuses an existing first-pass result.
    """
    _check_inputs(sys, nn, target, tau, r)
    t0 = time.perf_counter()
    offset = 0.0
    if base is None:
        base = breach_lp(sys, nn, target, tau, r, options)
    elif base.tau != tau:
        raise ValueError("base result has a different horizon")
    else:
        offset = base.wall_clock
    bp_sets = list(base.bp_sets[:2])
    n_lp = base.lp_solves
    for t in range(2, tau + 1):
        if base.bp_sets[t].is_empty:
            bp_sets.append(RectUnion())
            continue
        cells = partition(base.hulls[t], r)
        if options.single_step_refinement:
            steps, tgt = 1, base.hulls[t - 1]
        else:
            steps, tgt = t, target

        def work(cell, steps=steps, tgt=tgt, t=t):
            cb = relax(nn, cell, options.lower_slope)
            if steps == 1:
                p = one_step_lp(sys, tgt, cb, cell, options.clip_control_bounds)
            else:
                omega = [None] + list(base.omega[: t - 1])
                p = chained_lp(
                    sys, tgt, steps, cell, cb, base.hulls, omega, options.clip_control_bounds
                )
            return _cell_box(p, _state_objectives(sys.n_x, p.n_vars), cell, f"refinement step {t}")

        out = _pmap(work, cells, options.n_threads())
        n_lp += sum(n for _, n in out)
        bp_sets.append(RectUnion.of(box for box, _ in out if box is not None))
    hulls = [None if u.is_empty else bound_with_rectangle(u) for u in bp_sets]
    return BackreachResult(
        "rebreach",
        bp_sets,
        hulls,
        list(base.omega),
        n_lp,
        base.backreach_lp_solves,
        list(base.backreach_rects),
        offset + time.perf_counter() - t0,
        base,
    )


def forward_lp(
    sys: LinearSystem, bounds: AffineBounds, cell: HyperRectangle, clip_controls: bool = False
) -> LinearProgram:
    n_x, n_u = sys.n_x, sys.n_u
    n = n_x + n_u
    R_rows, R_rhs = _relaxation_rows(bounds, slice(0, n_x), slice(n_x, n), n)
    u_lo, u_hi = _control_bounds(sys, clip_controls)
    return LinearProgram(
        np.zeros(n), "minimize", R_rows, R_rhs,
        lb=np.concatenate([cell.lo, u_lo]), ub=np.concatenate([cell.hi, u_hi]),
    )


@dataclass
class ForwardResult:
    sets: list[RectUnion]
    lp_solves: int
    wall_clock: float = 0.0

    def to_dict(self) -> dict:
        return {
            "sets": [u.to_list() for u in self.sets],
            "lp_solves": self.lp_solves,
            "wall_clock": self.wall_clock,
        }


def reach_forward_result(
    sys: LinearSystem,
    nn: NeuralNetwork,
    init: HyperRectangle,
    tau: int,
    r: Sequence[int],
    options: BackreachOptions = DEFAULT_OPTIONS,
) -> ForwardResult:
    _check_inputs(sys, nn, init, tau, r)
    t0 = time.perf_counter()
    sets = [RectUnion((init,))]
    n_lp = 0
    objs = np.hstack([sys.A, sys.B])
    for _ in range(tau):
        cells = partition(bound_with_rectangle(sets[-1]), r)

        def work(cell):
            bounds = relax(nn, cell, options.lower_slope)
            p = forward_lp(sys, bounds, cell, options.clip_control_bounds)
            lo, hi, n, feasible, failures = _face_lps(p, objs, sys.c)
            if failures or not feasible or np.any(np.isnan(lo)) or np.any(np.isnan(hi)):
                raise SolverFailure(f"forward LP failed for cell {cell}: {failures}")
            return _widen_into(lo, hi, None), n

        out = _pmap(work, cells, options.n_threads())
        n_lp += sum(n for _, n in out)
        sets.append(RectUnion.of(box for box, _ in out))
    return ForwardResult(sets, n_lp, time.perf_counter() - t0)


def reach_forward(
    sys: LinearSystem,
    nn: NeuralNetwork,
    init: HyperRectangle,
    tau: int,
    r: Sequence[int],
    options: BackreachOptions = DEFAULT_OPTIONS,
) -> list[RectUnion]:
    """Forward reachable-set over-approximations; index 0 is ``init``."""
    return reach_forward_result(sys, nn, init, tau, r, options).sets


def _first_hit(sets: Sequence[RectUnion], region: HyperRectangle) -> SafetyVerdict:
    for t, u in enumerate(sets):
        if t == 0:
            continue
        for m in u.members:
            if m.intersects(region):
                return SafetyVerdict(False, t, m)
    return SafetyVerdict(True)


def certify_safety(result: BackreachResult, x0: HyperRectangle) -> SafetyVerdict:
    """Safe iff no backprojection estimate (t >= 1) touches the initial set."""
    if x0.dim != result.bp_sets[0].members[0].dim:
        raise ValueError("initial set dimension does not match the result")
    return _first_hit(result.bp_sets, x0)


def certify_forward(sets: Sequence[RectUnion], target: HyperRectangle) -> SafetyVerdict:
    """Safe iff no forward reachable estimate (t >= 1) touches the target."""
    return _first_hit(sets, target)


def iterated_backreach_hull(sys: LinearSystem, target: HyperRectangle, tau: int) -> HyperRectangle:
    """Bounding box of the policy-independent backreachable boxes for 0..tau steps."""
    boxes = [target]
    cur = target
    for _ in range(tau):
        cur = backreach_rect(sys, cur)
        if cur is None:
            break
        boxes.append(cur)
    try:
        return bound_with_rectangle(boxes)
    except EmptySetError:  # pragma: no cover - boxes always holds the target
        return target
