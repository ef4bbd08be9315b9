"""Problem containers: control sets, expression-backed fields, Bolza data.

A Bolza problem maximizes l objectives J_i = g_i(x(T)) + int_0^T f0_i dt over
processes (x, u) subject to dx = f(t, x, u), x(0) = xi0, terminal inequality
constraints g_a(x(T)) >= 0 and equality constraints h_b(x(T)) = 0, with
controls taking values in a box, a finite set, or all of R^k.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import exprdsl as ex
from . import trajectory as tr
from .trajectory import (NormalizedPiecewiseC0Path, PiecewiseC1Path, _Segment,
                         path_from_polys, quintic_hermite_poly)

__all__ = [
    "ProblemError", "ControlSet", "ScalarField", "VectorField", "BolzaProblem",
    "Process", "AdmissibilityTolerances", "AdmissibilityReport",
    "evaluate_objectives", "check_admissible", "partial_differentials",
    "Partials", "integrate_state",
]


class ProblemError(ValueError):
    pass


# ---------------------------------------------------------------------------
# control sets


@dataclass(frozen=True)
class ControlSet:
    """Admissible control values: a box, a finite point set, or all of R^k."""

    kind: str  # "box" | "finite" | "free"
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None
    points: np.ndarray | None = None
    free_dim: int | None = None

    @staticmethod
    def box(lower, upper) -> "ControlSet":
        lo = np.atleast_1d(np.asarray(lower, dtype=float))
        hi = np.atleast_1d(np.asarray(upper, dtype=float))
        if lo.shape != hi.shape or np.any(lo >= hi):
            raise ProblemError("box bounds must satisfy lower < upper componentwise")
        return ControlSet("box", lower=lo, upper=hi)

    @staticmethod
    def finite(points) -> "ControlSet":
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if len(pts) == 0:
            raise ProblemError("finite control set needs at least one point")
        return ControlSet("finite", points=pts)

    @staticmethod
    def free(dim: int) -> "ControlSet":
        return ControlSet("free", free_dim=int(dim))

    @property
    def dim(self) -> int:
        if self.kind == "box":
            return len(self.lower)
        if self.kind == "finite":
            return self.points.shape[1]
        return self.free_dim

    def contains(self, u, tol: float = 1e-9) -> bool:
        u = np.atleast_1d(np.asarray(u, dtype=float))
        if self.kind == "free":
            return True
        if self.kind == "box":
            return bool(np.all(u >= self.lower - tol) and np.all(u <= self.upper + tol))
        return bool(np.min(np.max(np.abs(self.points - u), axis=1)) <= tol)

    def project(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        if self.kind == "free":
            return u
        if self.kind == "box":
            return np.clip(u, self.lower, self.upper)
        i = int(np.argmin(np.max(np.abs(self.points - u), axis=-1)))
        return self.points[i]

    def interior_contains(self, u, margin: float = 1e-9) -> bool:
        """True when a full neighborhood of u lies in the set."""
        u = np.atleast_1d(np.asarray(u, dtype=float))
        if self.kind == "free":
            return True
        if self.kind == "box":
            return bool(np.all(u > self.lower + margin) and np.all(u < self.upper - margin))
        return False

    def candidate_grid(self, n_per_dim: int = 101) -> np.ndarray | None:
        """Finite search stencil for maximization; None for free sets."""
        if self.kind == "finite":
            return self.points
        if self.kind == "free":
            return None
        k = self.dim
        axes = [np.linspace(self.lower[j], self.upper[j], n_per_dim) for j in range(k)]
        if k == 1:
            return axes[0][:, None]
        if k == 2:
            return np.array(list(itertools.product(*axes)))
        # higher-dimensional boxes: axis sweeps through the box center
        center = 0.5 * (self.lower + self.upper)
        rows = []
        for j in range(k):
            block = np.tile(center, (n_per_dim, 1))
            block[:, j] = axes[j]
            rows.append(block)
        return np.vstack(rows)

    def to_json(self) -> dict:
        if self.kind == "box":
            return {"kind": "box", "lower": self.lower.tolist(),
                    "upper": self.upper.tolist()}
        if self.kind == "finite":
            return {"kind": "finite", "points": self.points.tolist()}
        return {"kind": "free", "dim": self.free_dim}

    @staticmethod
    def from_json(obj: dict) -> "ControlSet":
        kind = obj.get("kind")
        if kind == "box":
            return ControlSet.box(obj["lower"], obj["upper"])
        if kind == "finite":
            return ControlSet.finite(obj["points"])
        if kind == "free":
            return ControlSet.free(obj["dim"])
        raise ProblemError(f"unknown control set kind {kind!r}")


# ---------------------------------------------------------------------------
# expression-backed fields


class ScalarField:
    """Scalar function of (t, x, u), or of x(T) alone when terminal=True."""

    def __init__(self, expr: ex.Expr | str, n: int, k: int, params: dict | None = None,
                 terminal: bool = False):
        self.expr = ex.parse(expr) if isinstance(expr, str) else expr
        self.n = n
        self.k = k
        self.params = dict(params or {})
        self.terminal = terminal
        if terminal:
            ex.validate(self.expr, n, 0, self.params)
        else:
            ex.validate(self.expr, n, k, self.params)
        self._cache: dict = {}

    @property
    def smooth(self) -> bool:
        return not ex.contains_kinks(self.expr)

    def _compiled(self, key, expr, mode="numpy"):
        full = (key, mode)
        if full not in self._cache:
            self._cache[full] = ex.compile_expr(expr, self.params, mode)
        return self._cache[full]

    def __call__(self, t, x, u=()):
        return self._compiled("v", self.expr)(t, np.asarray(x), np.asarray(u))

    def scalar_fn(self, mode="math"):
        return self._compiled("v", self.expr, mode)

    def _grad_exprs(self, wrt: str, count: int):
        key = ("g", wrt)
        if key not in self._cache:
            self._cache[key] = tuple(
                ex.differentiate(self.expr, f"{wrt}[{i}]") for i in range(count))
        return self._cache[key]

    def grad_x(self, t, x, u=()):
        rows = self._grad_exprs("x", self.n)
        x, u = np.asarray(x), np.asarray(u)
        return np.array([self._compiled(("gx", i), e)(t, x, u)
                         for i, e in enumerate(rows)], dtype=float)

    def grad_u(self, t, x, u):
        rows = self._grad_exprs("u", self.k)
        x, u = np.asarray(x), np.asarray(u)
        return np.array([self._compiled(("gu", i), e)(t, x, u)
                         for i, e in enumerate(rows)], dtype=float)

    def grad_x_batch(self, ts, xs, us):
        """Gradient rows at many points: returns (len(ts), n)."""
        rows = self._grad_exprs("x", self.n)
        xT = np.asarray(xs).T
        uT = np.asarray(us).T if np.asarray(us).size else np.zeros((self.k, len(ts)))
        out = np.empty((len(ts), self.n))
        for i, e in enumerate(rows):
            out[:, i] = np.broadcast_to(self._compiled(("gx", i), e)(ts, xT, uT), (len(ts),))
        return out

    def value_batch(self, ts, xs, us):
        xT = np.asarray(xs).T
        uT = np.asarray(us).T if np.asarray(us).size else np.zeros((self.k, len(ts)))
        return np.broadcast_to(self._compiled("v", self.expr)(ts, xT, uT),
                               (len(ts),)).astype(float)

    def grad_u_batch(self, ts, xs, us):
        """Control-gradient rows at many points: returns (len(ts), k)."""
        rows = self._grad_exprs("u", self.k)
        xT = np.asarray(xs).T
        uT = np.asarray(us).T if np.asarray(us).size else np.zeros((self.k, len(ts)))
        out = np.empty((len(ts), self.k))
        for j, e in enumerate(rows):
            out[:, j] = np.broadcast_to(self._compiled(("gu", j), e)(ts, xT, uT), (len(ts),))
        return out

    def dt_expr(self):
        if "dt" not in self._cache:
            self._cache["dt"] = ex.differentiate(self.expr, "t")
        return self._cache["dt"]

    def grad_x_rate_batch(self, ts, xs, us, xdots, udots):
        """Total time derivative of grad_x along a trajectory direction."""
        rows = self._grad_exprs("x", self.n)
        xT, uT = np.asarray(xs).T, np.asarray(us).T
        if uT.size == 0:
            uT = np.zeros((self.k, len(ts)))
        out = np.zeros((len(ts), self.n))
        for i, e in enumerate(rows):
            total = np.broadcast_to(
                self._compiled(("gxt", i), ex.differentiate(e, "t"))(ts, xT, uT),
                (len(ts),)).astype(float).copy()
            for a in range(self.n):
                de = self._compiled(("gxx", i, a), ex.differentiate(e, f"x[{a}]"))
                total = total + np.broadcast_to(de(ts, xT, uT), (len(ts),)) * xdots[:, a]
            for b in range(self.k):
                de = self._compiled(("gxu", i, b), ex.differentiate(e, f"u[{b}]"))
                total = total + np.broadcast_to(de(ts, xT, uT), (len(ts),)) * udots[:, b]
            out[:, i] = total
        return out

    def to_source(self) -> str:
        return ex.pretty(self.expr)


class VectorField:
    """Vector function of (t, x, u) given by one expression per component."""

    def __init__(self, rows: Sequence[ex.Expr | str], n: int, k: int,
                 params: dict | None = None):
        self.fields = tuple(ScalarField(r, n, k, params) for r in rows)
        self.n = n
        self.k = k
        self.params = dict(params or {})

    def __len__(self):
        return len(self.fields)

    @property
    def smooth(self) -> bool:
        return all(f.smooth for f in self.fields)

    def __call__(self, t, x, u):
        return np.array([f(t, x, u) for f in self.fields], dtype=float)

    def rhs_scalar(self):
        fns = [f.scalar_fn("math") for f in self.fields]
        def rhs(t, x, u):
            return np.array([fn(t, x, u) for fn in fns], dtype=float)
        return rhs

    def value_batch(self, ts, xs, us):
        return np.stack([f.value_batch(ts, xs, us) for f in self.fields], axis=1)

    def jac_x(self, t, x, u):
        return np.stack([f.grad_x(t, x, u) for f in self.fields])

    def jac_u(self, t, x, u):
        return np.stack([f.grad_u(t, x, u) for f in self.fields])

    def jac_x_batch(self, ts, xs, us):
        """(len(ts), len(rows), n) array of x-Jacobians."""
        return np.stack([f.grad_x_batch(ts, xs, us) for f in self.fields], axis=1)

    def dt_batch(self, ts, xs, us):
        xT, uT = np.asarray(xs).T, np.asarray(us).T
        if uT.size == 0:
            uT = np.zeros((self.k, len(ts)))
        out = np.empty((len(ts), len(self.fields)))
        for i, f in enumerate(self.fields):
            out[:, i] = np.broadcast_to(
                f._compiled("dtv", f.dt_expr())(ts, xT, uT), (len(ts),))
        return out

    def jac_u_batch(self, ts, xs, us):
        xT, uT = np.asarray(xs).T, np.asarray(us).T
        if uT.size == 0:
            uT = np.zeros((self.k, len(ts)))
        out = np.empty((len(ts), len(self.fields), self.k))
        for i, f in enumerate(self.fields):
            rows = f._grad_exprs("u", self.k)
            for j, e in enumerate(rows):
                out[:, i, j] = np.broadcast_to(
                    f._compiled(("gu", j), e)(ts, xT, uT), (len(ts),))
        return out

    def jac_x_rate_batch(self, ts, xs, us, xdots, udots):
        return np.stack(
            [f.grad_x_rate_batch(ts, xs, us, xdots, udots) for f in self.fields], axis=1)


# ---------------------------------------------------------------------------
# problems and processes


@dataclass(frozen=True)
class BolzaProblem:
    name: str
    T: float
    n: int
    k: int
    control_set: ControlSet
    xi0: np.ndarray
    dynamics: VectorField
    running: tuple[ScalarField, ...]      # integrand of each objective
    terminal: tuple[ScalarField, ...]     # terminal payoff of each objective
    ineq: tuple[ScalarField, ...] = ()    # g_a(x(T)) >= 0
    eq: tuple[ScalarField, ...] = ()      # h_b(x(T)) = 0
    omega: tuple[np.ndarray, np.ndarray] | None = None
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.T <= 0:
            raise ProblemError(f"horizon must be positive, got {self.T}")
        if len(self.running) != len(self.terminal) or not self.running:
            raise ProblemError("need matching, nonempty running and terminal objective lists")
        if self.control_set.dim != self.k:
            raise ProblemError(
                f"control set dimension {self.control_set.dim} differs from k={self.k}")
        if self.xi0.shape != (self.n,):
            raise ProblemError(f"xi0 must have shape ({self.n},)")
        if len(self.dynamics) != self.n:
            raise ProblemError("dynamics must have one component per state")
        if self.omega is not None:
            lo, hi = self.omega
            if np.any(self.xi0 < lo) or np.any(self.xi0 > hi):
                raise ProblemError("xi0 lies outside the state domain")

    @staticmethod
    def build(name: str, T: float, n: int, k: int, control_set: ControlSet,
              xi0, dynamics: Sequence[str], running: Sequence[str],
              terminal: Sequence[str], ineq: Sequence[str] = (),
              eq: Sequence[str] = (), omega=None, params: dict | None = None
              ) -> "BolzaProblem":
        params = dict(params or {})
        return BolzaProblem(
            name=name, T=float(T), n=n, k=k, control_set=control_set,
            xi0=np.atleast_1d(np.asarray(xi0, dtype=float)),
            dynamics=VectorField(dynamics, n, k, params),
            running=tuple(ScalarField(s, n, k, params) for s in running),
            terminal=tuple(ScalarField(s, n, k, params, terminal=True) for s in terminal),
            ineq=tuple(ScalarField(s, n, k, params, terminal=True) for s in ineq),
            eq=tuple(ScalarField(s, n, k, params, terminal=True) for s in eq),
            omega=None if omega is None else
            (np.asarray(omega[0], dtype=float), np.asarray(omega[1], dtype=float)),
            params=params)

    @property
    def l(self) -> int:
        return len(self.running)

    @property
    def m(self) -> int:
        return len(self.ineq)

    @property
    def q(self) -> int:
        return len(self.eq)

    def is_mayer(self) -> bool:
        return all(isinstance(f.expr, ex.Num) and f.expr.value == 0.0
                   for f in self.running)

    # terminal data evaluated at a point
    def terminal_values(self, xT) -> np.ndarray:
        return np.array([g(0.0, xT) for g in self.terminal], dtype=float)

    def terminal_gradients(self, xT) -> np.ndarray:
        return np.stack([g.grad_x(0.0, xT) for g in self.terminal]) if self.terminal \
            else np.zeros((0, self.n))

    def ineq_values(self, xT) -> np.ndarray:
        return np.array([g(0.0, xT) for g in self.ineq], dtype=float)

    def ineq_gradients(self, xT) -> np.ndarray:
        return np.stack([g.grad_x(0.0, xT) for g in self.ineq]) if self.ineq \
            else np.zeros((0, self.n))

    def eq_values(self, xT) -> np.ndarray:
        return np.array([h(0.0, xT) for h in self.eq], dtype=float)

    def eq_gradients(self, xT) -> np.ndarray:
        return np.stack([h.grad_x(0.0, xT) for h in self.eq]) if self.eq \
            else np.zeros((0, self.n))


@dataclass(frozen=True)
class Process:
    """A candidate: continuous piecewise-C1 state with a normalized control."""

    state: PiecewiseC1Path
    control: NormalizedPiecewiseC0Path

    def __post_init__(self):
        if abs(self.state.T - self.control.T) > 1e-12 * max(self.state.T, 1.0):
            raise ProblemError("state and control have different horizons")

    @property
    def T(self) -> float:
        return self.state.T

    def corners(self) -> np.ndarray:
        return tr.merge_corners(
            np.concatenate([self.state.corners, self.control.corners]), self.T)


# ---------------------------------------------------------------------------
# integrand paths and objective evaluation


def _integrand_path(fields: Sequence[ScalarField], proc: Process
                    ) -> NormalizedPiecewiseC0Path:
    """Path t -> (f_i(t, x(t), u(t)))_i with segment-local one-sided limits."""
    T = proc.T
    corners = proc.corners()
    breaks = np.concatenate(([0.0], corners, [T]))
    segs = []
    for i in range(len(breaks) - 1):
        a, b = breaks[i], breaks[i + 1]
        mid = 0.5 * (a + b)
        si = int(np.clip(np.searchsorted(proc.state.breaks, mid, side="right") - 1,
                         0, len(proc.state.segments) - 1))
        ci = int(np.clip(np.searchsorted(proc.control.breaks, mid, side="right") - 1,
                         0, len(proc.control.segments) - 1))
        def fn(ts, si=si, ci=ci):
            xs = proc.state.segments[si].fn(ts)
            us = proc.control.segments[ci].fn(ts)
            return np.stack([f.value_batch(ts, xs, us) for f in fields], axis=1)
        segs.append(_Segment(a, b, fn, None))
    return NormalizedPiecewiseC0Path(T, corners, segs, len(fields))


def evaluate_objectives(prob: BolzaProblem, proc: Process,
                        quad_tol: float = tr.QUAD_TOL) -> np.ndarray:
    """J_i = terminal payoff at x(T) plus the integral of the running term."""
    xT = proc.state(proc.T)
    vals = prob.terminal_values(xT)
    path = _integrand_path(prob.running, proc)
    vals = vals + tr.integrate(path, 0.0, prob.T, quad_tol)
    return vals


# ---------------------------------------------------------------------------
# admissibility


@dataclass(frozen=True)
class AdmissibilityTolerances:
    dynamics: float = 1e-5
    ineq: float = 1e-8
    eq: float = 1e-8
    initial: float = 1e-8
    grid: int = 2001


@dataclass(frozen=True)
class AdmissibilityReport:
    admissible: bool
    dynamics_residual: float
    initial_residual: float
    ineq_residual: float
    eq_residual: float
    in_domain: bool
    control_in_set: bool
    worst_time: float
    tolerances: AdmissibilityTolerances

    def to_json(self) -> dict:
        return {
            "admissible": self.admissible,
            "dynamics_residual": self.dynamics_residual,
            "initial_residual": self.initial_residual,
            "ineq_residual": self.ineq_residual,
            "eq_residual": self.eq_residual,
            "in_domain": self.in_domain,
            "control_in_set": self.control_in_set,
            "worst_time": self.worst_time,
            "tolerances": {
                "dynamics": self.tolerances.dynamics,
                "ineq": self.tolerances.ineq,
                "eq": self.tolerances.eq,
                "initial": self.tolerances.initial,
            },
        }


def check_admissible(prob: BolzaProblem, proc: Process,
                     tol: AdmissibilityTolerances = AdmissibilityTolerances()
                     ) -> AdmissibilityReport:
    """Verify dynamics along a grid (one-sided at corners), initial condition,
    terminal constraint values, state domain, and control set membership."""
    corners = proc.corners()
    dx = proc.state.extended_derivative()
    worst = 0.0
    worst_t = 0.0
    control_ok = True

    breaks = np.concatenate(([0.0], corners, [proc.T]))
    n_grid = max(2, int(round(tol.grid * 1.0)))
    for i in range(len(breaks) - 1):
        a, b = breaks[i], breaks[i + 1]
        m = max(2, int(np.ceil(n_grid * (b - a) / prob.T)) + 1)
        ts = np.linspace(a, b, m)
        si = int(np.clip(np.searchsorted(proc.state.breaks, 0.5 * (a + b), side="right") - 1,
                         0, len(proc.state.segments) - 1))
        ci = int(np.clip(np.searchsorted(proc.control.breaks, 0.5 * (a + b), side="right") - 1,
                         0, len(proc.control.segments) - 1))
        di = int(np.clip(np.searchsorted(dx.breaks, 0.5 * (a + b), side="right") - 1,
                         0, len(dx.segments) - 1))
        xs = proc.state.segments[si].fn(ts)
        us = proc.control.segments[ci].fn(ts)
        dxs = dx.segments[di].fn(ts)
        fs = prob.dynamics.value_batch(ts, xs, us)
        res = np.max(np.abs(dxs - fs), axis=1)
        j = int(np.argmax(res))
        if res[j] > worst:
            worst, worst_t = float(res[j]), float(ts[j])
        if prob.control_set.kind != "free":
            for u in us[:: max(1, len(us) // 64)]:
                if not prob.control_set.contains(u, tol=1e-7):
                    control_ok = False
                    break

    x0 = proc.state(0.0)
    initial = float(np.max(np.abs(x0 - prob.xi0)))
    xT = proc.state(proc.T)
    gv = prob.ineq_values(xT)
    ineq_res = float(max(0.0, -(gv.min())) if gv.size else 0.0)
    hv = prob.eq_values(xT)
    eq_res = float(np.max(np.abs(hv)) if hv.size else 0.0)

    in_domain = True
    if prob.omega is not None:
        lo, hi = prob.omega
        ts = tr.check_grid(prob.T, corners, 201)
        xs = proc.state(ts)
        in_domain = bool(np.all(xs >= lo - 1e-12) and np.all(xs <= hi + 1e-12))

    ok = (worst <= tol.dynamics and initial <= tol.initial
          and ineq_res <= tol.ineq and eq_res <= tol.eq and in_domain and control_ok)
    return AdmissibilityReport(ok, worst, initial, ineq_res, eq_res, in_domain,
                               control_ok, worst_t, tol)


# ---------------------------------------------------------------------------
# partial differentials


@dataclass(frozen=True)
class Partials:
    d2f: np.ndarray    # (n, n) state Jacobian of the dynamics
    d3f: np.ndarray    # (n, k) control Jacobian of the dynamics
    d2f0: np.ndarray   # (l, n) state gradients of the running terms
    d3f0: np.ndarray   # (l, k) control gradients of the running terms
    smooth: bool


def partial_differentials(prob: BolzaProblem, t: float, x, u) -> Partials:
    """First-order partials of dynamics and running objectives at one point.

    Control derivatives are meaningless over a finite control set, so that
    case raises rather than returning garbage.
    """
    if prob.control_set.kind == "finite":
        raise ProblemError("control partials are unavailable for finite control sets")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    u = np.atleast_1d(np.asarray(u, dtype=float))
    smooth = prob.dynamics.smooth and all(f.smooth for f in prob.running)
    return Partials(
        d2f=prob.dynamics.jac_x(t, x, u),
        d3f=prob.dynamics.jac_u(t, x, u),
        d2f0=np.stack([f.grad_x(t, x, u) for f in prob.running]),
        d3f0=np.stack([f.grad_u(t, x, u) for f in prob.running]),
        smooth=smooth)


# ---------------------------------------------------------------------------
# forward integration


def _control_rates(seg: _Segment, ts: np.ndarray, mids: np.ndarray, dim: int):
    """Control time-derivatives at segment nodes and (for the interval's right
    end) at points where a piecewise-linear interpolant's slope is constant."""
    if seg.dfn is None:
        delta = min(1e-6, (seg.b - seg.a) / 8.0)
        qs = np.clip(ts, seg.a + delta, seg.b - delta)
        du = (seg.fn(qs + delta) - seg.fn(qs - delta)) / (2 * delta)
        return du, du[:-1]
    if getattr(seg, "prefer_midpoint_rate", False):
        du_mid = seg.dfn(mids)
        du_nodes = np.vstack([du_mid, du_mid[-1:]])
        return du_nodes, du_mid
    du_nodes = seg.dfn(ts)
    return du_nodes, seg.dfn(mids)


def integrate_state(prob: BolzaProblem, control: NormalizedPiecewiseC0Path,
                    n_steps: int = 1000, x0=None) -> Process:
    """RK4 forward integration of the dynamics under the given control.

    Steps never cross control corners.  The stored path carries quintic
    dense-output segments whose second derivatives come from the chain rule
    on the dynamics, keeping the dynamics defect at fourth order in the step.
    """
    x0 = prob.xi0 if x0 is None else np.atleast_1d(np.asarray(x0, dtype=float))
    rhs = prob.dynamics.rhs_scalar()
    polys = []
    x = x0.astype(float).copy()
    for seg in control.segments:
        span = seg.b - seg.a
        m = max(2, int(np.ceil(n_steps * span / prob.T)))
        ts = np.linspace(seg.a, seg.b, m + 1)
        h = span / m
        mids = ts[:-1] + 0.5 * h
        u_nodes = seg.fn(ts)
        u_mids = seg.fn(mids)
        xs = np.empty((m + 1, prob.n))
        xs[0] = x
        for j in range(m):
            k1 = rhs(ts[j], x, u_nodes[j])
            k2 = rhs(mids[j], x + 0.5 * h * k1, u_mids[j])
            k3 = rhs(mids[j], x + 0.5 * h * k2, u_mids[j])
            k4 = rhs(ts[j + 1], x + h * k3, u_nodes[j + 1])
            x = x + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
            xs[j + 1] = x
        dxs = prob.dynamics.value_batch(ts, xs, u_nodes)
        du_nodes, du_mids = _control_rates(seg, ts, mids, control.dim)
        # x'' = f_t + f_x f + f_u du along the trajectory, one-sided per interval
        ft = prob.dynamics.dt_batch(ts, xs, u_nodes)
        fx = prob.dynamics.jac_x_batch(ts, xs, u_nodes)
        fu = prob.dynamics.jac_u_batch(ts, xs, u_nodes)
        d2 = ft + np.einsum("mij,mj->mi", fx, dxs) + np.einsum("mij,mj->mi", fu, du_nodes)
        d2l = d2[:-1].copy()
        d2r = d2[1:].copy()
        if getattr(seg, "prefer_midpoint_rate", False) or seg.dfn is None:
            # interval-local control slope: recompute the u-rate terms per side
            d2l = ft[:-1] + np.einsum("mij,mj->mi", fx[:-1], dxs[:-1]) \
                + np.einsum("mij,mj->mi", fu[:-1], du_mids)
            d2r = ft[1:] + np.einsum("mij,mj->mi", fx[1:], dxs[1:]) \
                + np.einsum("mij,mj->mi", fu[1:], du_mids)
        polys.append(quintic_hermite_poly(ts, xs, dxs, d2l, d2r))
    state = path_from_polys(PiecewiseC1Path, polys, control.T, control.corners, prob.n)
    return Process(state=state, control=control)
