"""Thin linear-program layer over scipy's HiGHS backend."""

from __future__ import annotations

import enum
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog

FEAS_TOL = 1e-7


class Status(str, enum.Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"
    FAILED = "failed"


class SolverFailure(RuntimeError):
    """An LP the analysis depends on could not be solved reliably."""


@dataclass(eq=False)
class LinearProgram:
    """min/max c @ z  s.t.  A_ub z <= b_ub,  A_eq z == b_eq,  lb <= z <= ub.

    Missing variable bounds default to free variables (not z >= 0).
    """

    objective: np.ndarray
    sense: str = "minimize"
    A_ub: np.ndarray | None = None
    b_ub: np.ndarray | None = None
    A_eq: np.ndarray | None = None
    b_eq: np.ndarray | None = None
    lb: np.ndarray | None = None
    ub: np.ndarray | None = None
    names: list[str] | None = field(default=None)

    def __post_init__(self):
        self.objective = np.asarray(self.objective, dtype=float).reshape(-1)
        n = self.objective.shape[0]
        if self.sense not in ("minimize", "maximize"):
            raise ValueError(f"sense must be minimize or maximize, got {self.sense!r}")
        for a, b, tag in ((self.A_ub, self.b_ub, "ub"), (self.A_eq, self.b_eq, "eq")):
            if (a is None) != (b is None):
                raise ValueError(f"A_{tag} and b_{tag} must be given together")
        if self.A_ub is not None:
            self.A_ub = np.atleast_2d(np.asarray(self.A_ub, dtype=float))
            self.b_ub = np.asarray(self.b_ub, dtype=float).reshape(-1)
            if self.A_ub.shape != (self.b_ub.shape[0], n):
                raise ValueError(f"A_ub shape {self.A_ub.shape} inconsistent with {n} variables")
        if self.A_eq is not None:
            self.A_eq = np.atleast_2d(np.asarray(self.A_eq, dtype=float))
            self.b_eq = np.asarray(self.b_eq, dtype=float).reshape(-1)
            if self.A_eq.shape != (self.b_eq.shape[0], n):
                raise ValueError(f"A_eq shape {self.A_eq.shape} inconsistent with {n} variables")
        self.lb = np.full(n, -np.inf) if self.lb is None else np.asarray(self.lb, dtype=float)
        self.ub = np.full(n, np.inf) if self.ub is None else np.asarray(self.ub, dtype=float)
        if self.lb.shape != (n,) or self.ub.shape != (n,):
            raise ValueError("variable bounds must match the number of variables")

    @property
    def n_vars(self) -> int:
        return self.objective.shape[0]

    def with_objective(self, objective, sense: str) -> LinearProgram:
        """Same feasible set, different objective."""
        return LinearProgram(
            objective, sense, self.A_ub, self.b_ub, self.A_eq, self.b_eq, self.lb, self.ub, self.names
        )

    def is_feasible_point(self, z, tol: float = FEAS_TOL) -> bool:
        z = np.asarray(z, dtype=float)
        ok = np.all(z >= self.lb - tol) and np.all(z <= self.ub + tol)
        if self.A_ub is not None:
            ok = ok and np.all(self.A_ub @ z <= self.b_ub + tol)
        if self.A_eq is not None:
            ok = ok and np.all(np.abs(self.A_eq @ z - self.b_eq) <= tol)
        return bool(ok)

    def to_lp_text(self) -> str:
        """CPLEX LP-format dump, for cross-checking with external solvers."""
        names = self.names or [f"z{i}" for i in range(self.n_vars)]

        def expr(row):
            terms = []
            for coef, name in zip(row, names):
                if coef == 0:
                    continue
                sign = "-" if coef < 0 else "+"
                terms.append(f"{sign} {abs(coef):.17g} {name}")
            if not terms:
                return "0 " + names[0]
            s = " ".join(terms)
            return s[2:] if s.startswith("+ ") else s

        lines = ["Minimize" if self.sense == "minimize" else "Maximize", f" obj: {expr(self.objective)}"]
        lines.append("Subject To")
        if self.A_ub is not None:
            for i, (row, rhs) in enumerate(zip(self.A_ub, self.b_ub)):
                lines.append(f" c{i}: {expr(row)} <= {rhs:.17g}")
        if self.A_eq is not None:
            for i, (row, rhs) in enumerate(zip(self.A_eq, self.b_eq)):
                lines.append(f" e{i}: {expr(row)} = {rhs:.17g}")
        lines.append("Bounds")
        for name, lo, hi in zip(names, self.lb, self.ub):
            lo_s = "-inf" if np.isneginf(lo) else f"{lo:.17g}"
            hi_s = "+inf" if np.isposinf(hi) else f"{hi:.17g}"
            lines.append(f" {lo_s} <= {name} <= {hi_s}")
        lines.append("End")
        return "\n".join(lines) + "\n"


@dataclass(frozen=True, eq=False)
class LpSolution:
    status: Status
    value: float | None = None
    point: np.ndarray | None = None
    dual_value: float | None = None
    message: str = ""

    @property
    def optimal(self) -> bool:
        return self.status is Status.OPTIMAL


def _dual_objective(p: LinearProgram, res) -> float | None:
    """Lagrangian dual bound of the minimization form, from HiGHS marginals."""
    try:
        val = 0.0
        if p.A_ub is not None:
            val += float(res.ineqlin.marginals @ p.b_ub)
        if p.A_eq is not None:
            val += float(res.eqlin.marginals @ p.b_eq)
        ml, mu = res.lower.marginals, res.upper.marginals
        lb_term = np.where(ml != 0, ml * np.where(np.isfinite(p.lb), p.lb, 0.0), 0.0)
        ub_term = np.where(mu != 0, mu * np.where(np.isfinite(p.ub), p.ub, 0.0), 0.0)
        val += float(lb_term.sum() + ub_term.sum())
        return val
    except AttributeError:
        return None


def solve(p: LinearProgram) -> LpSolution:
    c = p.objective if p.sense == "minimize" else -p.objective
    bounds = [(None if np.isneginf(lo) else lo, None if np.isposinf(hi) else hi) for lo, hi in zip(p.lb, p.ub)]
    if np.any(p.lb > p.ub):
        return LpSolution(Status.INFEASIBLE, message="variable bounds cross")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        res = linprog(
            c,
            A_ub=p.A_ub,
            b_ub=p.b_ub,
            A_eq=p.A_eq,
            b_eq=p.b_eq,
            bounds=bounds,
            method="highs",
            options={"primal_feasibility_tolerance": FEAS_TOL, "dual_feasibility_tolerance": FEAS_TOL},
        )
    if res.status == 0:
        sign = 1.0 if p.sense == "minimize" else -1.0
        dual = _dual_objective(p, res)
        return LpSolution(
            Status.OPTIMAL,
            value=sign * float(res.fun),
            point=np.asarray(res.x, dtype=float),
            dual_value=None if dual is None else sign * dual,
            message=res.message,
        )
    if res.status == 2:
        return LpSolution(Status.INFEASIBLE, message=res.message)
    if res.status == 3:
        return LpSolution(Status.UNBOUNDED, message=res.message)
    return LpSolution(Status.FAILED, message=res.message)
