"""Weighted scalarization solver and Pareto front assembly.

Candidates are computed one weight vector at a time by a forward-backward
sweep: integrate the state forward under the current control, set the
terminal adjoint from the transversality formula, integrate the adjoint
backward, then update the control toward the pointwise Hamiltonian
maximizer with relaxation.  Terminal constraints enter through an
augmented-Lagrangian outer loop.  Fronts are assembled per-weight
(independently, optionally in parallel) and dominance-filtered.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import trajectory as tr
from .pontryagin import (CheckConfig, ConditionReport, MultiplierSet,
                         argmax_hamiltonian_batch, check_conditions,
                         terminal_adjoint, integrate_adjoint)
from .problem import BolzaProblem, Process, evaluate_objectives

__all__ = [
    "SolverError",
    "WeightVector",
    "SolverConfig",
    "ParetoPoint",
    "SolveFailure",
    "ParetoFront",
    "weight_grid",
    "integrate_state",
    "solve_scalarized",
    "sweep_front",
    "dominance_filter",
    "DOM_TOL",
]

DOM_TOL = 1e-9
SIMPLEX_TOL = 1e-12


class SolverError(RuntimeError):
    pass


@dataclass(frozen=True)
class WeightVector:
    """Objective weights on the unit simplex."""

    theta: np.ndarray

    def __post_init__(self):
        th = np.atleast_1d(np.asarray(self.theta, dtype=float))
        object.__setattr__(self, "theta", th)
        if th.ndim != 1 or th.size == 0 or not np.all(np.isfinite(th)):
            raise SolverError("weights must form a finite nonempty vector")
        if float(np.min(th)) < -SIMPLEX_TOL \
                or abs(float(np.sum(th)) - 1.0) > SIMPLEX_TOL:
            raise SolverError("weights must be nonnegative and sum to one")

    @staticmethod
    def make(values) -> "WeightVector":
        return WeightVector(np.asarray(values, dtype=float))

    def key(self) -> tuple:
        return tuple(float(v) for v in self.theta)

    def to_json(self) -> list:
        return [float(v) for v in self.theta]


def weight_grid(l: int, divisions: int = 10, cap: int = 500) -> list:
    """Uniform simplex lattice {c/d : sum c = d}; divisions shrink until the
    lattice size fits under the cap.  l = 2 with the defaults gives the
    eleven weights (0,1), (0.1,0.9), ..., (1,0)."""
    if l < 1 or divisions < 1 or cap < 1:
        raise SolverError("grid parameters must be positive")
    if l == 1:
        return [WeightVector.make([1.0])]
    d = divisions
    while d > 1 and math.comb(d + l - 1, l - 1) > cap:
        d -= 1

    out: list = []

    def rec(prefix, remaining, slots):
        if slots == 1:
            out.append(prefix + [remaining])
            return
        for c in range(remaining + 1):
            rec(prefix + [c], remaining - c, slots - 1)

    rec([], d, l)
    weights = [WeightVector.make([c / d for c in counts]) for counts in out]
    return sorted(weights, key=lambda w: w.key())


@dataclass(frozen=True)
class SolverConfig:
    """Sweep iteration, discretization, and augmented-Lagrangian knobs."""

    max_iters: int = 200
    relaxation: float = 0.5
    n_steps: int = 1000
    conv_tol: float = 1e-9
    penalty0: float = 1.0
    growth: float = 10.0
    max_outer: int = 8
    min_relaxation: float = 1.0 / 64.0
    feas_tol: float = 1e-8
    check: CheckConfig = field(default_factory=lambda: CheckConfig(
        tolerances={"adjoint_equation": 1e-3, "hamiltonian_maximum": 1e-4}))

    def __post_init__(self):
        if self.max_iters < 0 or self.n_steps < 1 or self.max_outer < 1:
            raise SolverError("iteration counts must be positive")
        if not 0.0 < self.relaxation <= 1.0 \
                or not 0.0 < self.min_relaxation <= 1.0:
            raise SolverError("relaxation must lie in (0, 1]")
        if self.conv_tol <= 0.0 or self.penalty0 <= 0.0 or self.growth < 1.0 \
                or self.feas_tol <= 0.0:
            raise SolverError("tolerances and penalties must be positive")


@dataclass
class ParetoPoint:
    weight: WeightVector
    process: Process
    objectives: np.ndarray
    multipliers: MultiplierSet
    necessary_report: ConditionReport | None = None
    sufficiency: object | None = None
    dominated: bool = False
    weakly_dominated: bool = False
    converged: bool = True
    iterations: int = 0
    message: str = ""

    def scalarized(self) -> float:
        return float(self.weight.theta @ self.objectives)

    def max_residual(self) -> float | None:
        if self.necessary_report is None:
            return None
        return max(r.residual for r in self.necessary_report.results)

    def to_json(self, include_trajectories: bool = False) -> dict:
        out = {
            "weight": self.weight.to_json(),
            "objectives": [float(v) for v in self.objectives],
            "scalarized": self.scalarized(),
            "converged": bool(self.converged),
            "iterations": int(self.iterations),
            "dominated": bool(self.dominated),
            "weakly_dominated": bool(self.weakly_dominated),
            "max_residual": self.max_residual(),
            "message": self.message,
            "conditions": None if self.necessary_report is None
            else self.necessary_report.to_json(),
            "multipliers": self.multipliers.to_json(),
            "sufficiency": None if self.sufficiency is None
            else self.sufficiency.to_json(),
        }
        if include_trajectories:
            out["state"] = tr.path_to_json(self.process.state)
            out["control"] = tr.path_to_json(self.process.control)
        return out


@dataclass(frozen=True)
class SolveFailure:
    weight: WeightVector
    reason: str
    point: ParetoPoint | None = None

    def to_json(self) -> dict:
        return {"weight": self.weight.to_json(), "reason": self.reason}


@dataclass(frozen=True)
class ParetoFront:
    problem: str
    points: tuple
    failures: tuple

    def to_json(self, include_trajectories: bool = False) -> dict:
        return {
            "problem": self.problem,
            "points": [p.to_json(include_trajectories) for p in self.points],
            "failures": [f.to_json() for f in self.failures],
        }


# ---------------------------------------------------------------------------
# state integration


def integrate_state(prob: BolzaProblem, control, x0=None,
                    n_steps: int = 1000):
    """Forward RK4 for dx/dt = f(t, x, u(t)) from the initial state.

    Steps never cross a control corner; the dense output is the cubic
    Hermite interpolant of the node values and slopes."""
    x0 = prob.xi0 if x0 is None else np.atleast_1d(np.asarray(x0, dtype=float))
    x = x0.astype(float).copy()
    corners = control.corners
    breaks = np.concatenate(([0.0], corners, [control.T]))
    polys = []
    for i in range(len(breaks) - 1):
        a, b = float(breaks[i]), float(breaks[i + 1])
        span = b - a
        m = max(2, int(np.ceil(n_steps * span / prob.T)))
        ts = np.linspace(a, b, m + 1)
        h = span / m
        mids = ts[:-1] + 0.5 * h
        seg = control.segments[i]
        us, um = seg.fn(ts), seg.fn(mids)
        xs = np.empty((m + 1, prob.n))
        xs[0] = x
        for j in range(m):
            k1 = prob.dynamics(ts[j], x, us[j])
            k2 = prob.dynamics(mids[j], x + 0.5 * h * k1, um[j])
            k3 = prob.dynamics(mids[j], x + 0.5 * h * k2, um[j])
            k4 = prob.dynamics(ts[j + 1], x + h * k3, us[j + 1])
            x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            xs[j + 1] = x
        if not np.all(np.isfinite(xs)):
            raise SolverError("state integration produced non-finite values")
        dxs = prob.dynamics.value_batch(ts, xs, us)
        polys.append(tr.cubic_hermite_poly(ts, xs, dxs))
    return tr.path_from_polys(tr.PiecewiseC1Path, polys, control.T, corners,
                              prob.n)


# ---------------------------------------------------------------------------
# forward-backward sweep


def _multiplier_estimates(prob, xT, lam, mu, rho):
    lam_hat = np.maximum(0.0, lam - rho * prob.ineq_values(xT)) \
        if prob.m else lam
    mu_hat = mu - rho * prob.eq_values(xT) if prob.q else mu
    return lam_hat, mu_hat


def _scalarized_value(prob, theta, proc) -> float:
    return float(theta @ evaluate_objectives(prob, proc))


def _fbsm(prob, theta, u_path, lam, mu, rho, cfg, trace):
    """One inner sweep loop at fixed multiplier/penalty state.

    Returns (control, state, converged, iterations).  The returned iterate
    is the last one when the control update reached the fixed-point
    tolerance, otherwise the best accepted iterate."""
    T = prob.T
    ts = np.linspace(0.0, T, cfg.n_steps + 1)
    finite = prob.control_set.kind == "finite"
    interp = "previous" if finite else "linear"
    omega = cfg.relaxation
    x_path = integrate_state(prob, u_path, n_steps=cfg.n_steps)
    proc = Process(state=x_path, control=u_path)
    j_best = _scalarized_value(prob, theta, proc)
    best = (u_path, x_path)
    if trace is not None:
        trace.append(j_best)
    drops = 0
    converged = False
    it = 0
    for it in range(1, cfg.max_iters + 1):
        xT = x_path(T)
        lam_hat, mu_hat = _multiplier_estimates(prob, xT, lam, mu, rho)
        pT = terminal_adjoint(prob, xT, theta, lam_hat, mu_hat)
        p_path = integrate_adjoint(prob, proc, pT, theta,
                                   n_steps=cfg.n_steps)
        xs, ps, us = x_path(ts), p_path(ts), u_path(ts)
        u_star = argmax_hamiltonian_batch(prob, ts, xs, ps, theta,
                                          cfg=cfg.check, us0=us)
        if not np.all(np.isfinite(u_star)) \
                or float(np.max(np.abs(u_star))) > 1e8:
            raise SolverError("pointwise Hamiltonian maximization appears "
                              "unbounded over the control set")
        u_new = u_star if finite else (1.0 - omega) * us + omega * u_star
        delta = float(np.max(np.abs(u_new - us)))
        u_path = tr.NormalizedPiecewiseC0Path.from_samples(
            ts, u_new, T=T, interpolation=interp)
        x_path = integrate_state(prob, u_path, n_steps=cfg.n_steps)
        proc = Process(state=x_path, control=u_path)
        j_new = _scalarized_value(prob, theta, proc)
        # drop threshold sits above the objective quadrature noise
        if j_new < j_best - 1e-9 * (1.0 + abs(j_best)):
            drops += 1
            if drops >= 3 and omega > cfg.min_relaxation:
                omega = max(0.5 * omega, cfg.min_relaxation)
                u_path, x_path = best
                proc = Process(state=x_path, control=u_path)
                drops = 0
                continue
        else:
            j_best = j_new
            best = (u_path, x_path)
            drops = 0
            if trace is not None:
                trace.append(j_new)
        if delta <= cfg.conv_tol:
            converged = True
            break
    if not converged:
        u_path, x_path = best
    return u_path, x_path, converged, it


def _initial_control(prob: BolzaProblem):
    u0 = prob.control_set.project(np.zeros(prob.k))
    return tr.NormalizedPiecewiseC0Path.constant(u0, prob.T)


def solve_scalarized(prob: BolzaProblem, theta, cfg: SolverConfig | None = None,
                     trace: list | None = None) -> ParetoPoint:
    """Forward-backward sweep for the single weighted objective.

    Terminal inequality and equality constraints are handled by an outer
    augmented-Lagrangian loop; the inequality multipliers stay clipped at
    zero so the attached multiplier set keeps the required signs.  A
    non-convergent sweep is returned with converged=False rather than
    raised."""
    cfg = cfg or SolverConfig()
    w = theta if isinstance(theta, WeightVector) else WeightVector.make(theta)
    if w.theta.size != prob.l:
        raise SolverError(f"expected {prob.l} weights, got {w.theta.size}")
    theta_v = w.theta
    u_path = _initial_control(prob)
    lam = np.zeros(prob.m)
    mu = np.zeros(prob.q)
    rho = cfg.penalty0
    has_tc = prob.m > 0 or prob.q > 0
    outer_rounds = cfg.max_outer if has_tc else 1
    converged = False
    total_iters = 0
    x_path = None
    for _ in range(outer_rounds):
        u_path, x_path, inner_conv, iters = _fbsm(
            prob, theta_v, u_path, lam, mu, rho, cfg, trace)
        total_iters += iters
        xT = x_path(prob.T)
        viol = 0.0
        if prob.m:
            viol = max(viol, float(np.max(np.maximum(
                0.0, -prob.ineq_values(xT)))))
        if prob.q:
            viol = max(viol, float(np.max(np.abs(prob.eq_values(xT)))))
        lam, mu = _multiplier_estimates(prob, xT, lam, mu, rho)
        if inner_conv and viol <= cfg.feas_tol:
            converged = True
            break
        if not has_tc:
            break
        rho *= cfg.growth
    proc = Process(state=x_path, control=u_path)
    pT = terminal_adjoint(prob, proc.state(prob.T), theta_v, lam, mu)
    adj = integrate_adjoint(prob, proc, pT, theta_v, n_steps=cfg.n_steps)
    mult = MultiplierSet.make(theta_v, lam, mu, adj).normalized()
    report = check_conditions(prob, proc, mult, cfg.check)
    message = "" if converged else \
        "control update did not reach the fixed-point tolerance"
    return ParetoPoint(weight=w, process=proc,
                       objectives=evaluate_objectives(prob, proc),
                       multipliers=mult, necessary_report=report,
                       converged=converged, iterations=total_iters,
                       message=message)


# ---------------------------------------------------------------------------
# fronts


def dominance_filter(points, dom_tol: float = DOM_TOL):
    """Flags (dominated, weakly_dominated) per objective vector.

    A point is dominated when some other point is at least as good in
    every objective (within dom_tol) and strictly better (beyond dom_tol)
    in one; weakly dominated when some other point is strictly better in
    every objective."""
    try:
        J = np.asarray([np.atleast_1d(np.asarray(p, dtype=float)).reshape(-1)
                        for p in points], dtype=float)
    except ValueError as err:
        raise SolverError("objective vectors must share one length") from err
    if J.ndim != 2:
        raise SolverError("objective vectors must share one length")
    npts = J.shape[0]
    dominated = np.zeros(npts, dtype=bool)
    weak = np.zeros(npts, dtype=bool)
    for a in range(npts):
        ge = np.all(J >= J[a] - dom_tol, axis=1)
        gt_any = np.any(J > J[a] + dom_tol, axis=1)
        gt_all = np.all(J > J[a] + dom_tol, axis=1)
        ge[a] = gt_any[a] = gt_all[a] = False
        dominated[a] = bool(np.any(ge & gt_any))
        weak[a] = bool(np.any(gt_all))
    return dominated, weak


def sweep_front(prob: BolzaProblem, grid, cfg: SolverConfig | None = None,
                jobs: int = 1, dom_tol: float = DOM_TOL) -> ParetoFront:
    """One scalarized solve per weight; failures are excluded from the
    front and reported alongside it.  Assembly order is the lexicographic
    weight order regardless of completion order."""
    cfg = cfg or SolverConfig()
    weights = [w if isinstance(w, WeightVector) else WeightVector.make(w)
               for w in grid]
    if not weights:
        raise SolverError("weight grid is empty")
    weights = sorted(weights, key=lambda w: w.key())

    def run(w):
        try:
            return solve_scalarized(prob, w, cfg)
        except SolverError as err:
            return err

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(run, weights))
    else:
        results = [run(w) for w in weights]
    points, failures = [], []
    for w, res in zip(weights, results):
        if isinstance(res, SolverError):
            failures.append(SolveFailure(weight=w, reason=str(res)))
        elif not res.converged:
            failures.append(SolveFailure(
                weight=w, reason=res.message or "did not converge",
                point=res))
        else:
            points.append(res)
    if points:
        dom, weak = dominance_filter([p.objectives for p in points],
                                     dom_tol=dom_tol)
        for p, d, wk in zip(points, dom, weak):
            p.dominated = bool(d)
            p.weakly_dominated = bool(wk)
    return ParetoFront(problem=prob.name, points=tuple(points),
                       failures=tuple(failures))
