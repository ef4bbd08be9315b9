"""Hamiltonians, adjoint integration, and first-order optimality checks.

A candidate for optimality in the weighted multiobjective problem carries
weights theta on the objectives, multipliers lam / mu on the terminal
inequality / equality constraints, and an adjoint path p.  The weighted
Hamiltonian is

    H(t, x, u, p, theta) = sum_i theta_i f0_i(t, x, u) + p . f(t, x, u)

and check_conditions reports, condition by condition, how far a candidate
is from first-order optimality: multiplier nontriviality and signs,
complementary slackness, the terminal equation for p(T), the adjoint
differential equation, pointwise Hamiltonian maximality over the control
set, and continuity of the Hamiltonian across control corners.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
from scipy.optimize import lsq_linear, minimize

from . import trajectory as tr
from .problem import BolzaProblem, Process, _control_rates
from .trajectory import PiecewiseC1Path, _Segment

__all__ = [
    "PontryaginError", "CONDITIONS", "DEFAULT_TOLERANCES", "CheckConfig",
    "MultiplierSet", "ConditionResult", "ConditionReport",
    "hamiltonian_mayer", "hamiltonian_bolza", "terminal_adjoint",
    "integrate_adjoint", "check_conditions", "maximize_hamiltonian",
    "argmax_hamiltonian_batch", "recover_multipliers", "minimize_on_sphere",
]


class PontryaginError(RuntimeError):
    pass


CONDITIONS = (
    "nontriviality",
    "multiplier_signs",
    "complementary_slackness",
    "transversality",
    "adjoint_equation",
    "hamiltonian_maximum",
    "hamiltonian_continuity",
)

DEFAULT_TOLERANCES = {
    "nontriviality": 1e-9,
    "multiplier_signs": 1e-9,
    "complementary_slackness": 1e-7,
    "transversality": 1e-6,
    "adjoint_equation": 1e-4,
    "hamiltonian_maximum": 1e-5,
    "hamiltonian_continuity": 1e-6,
}


@dataclass(frozen=True)
class CheckConfig:
    """Tolerances and grid sizes for the condition checks."""

    tolerances: Mapping[str, float] = field(default_factory=dict)
    time_grid: int = 1001
    control_grid: int = 101
    free_radius: float = 1.0
    mp_refine_tol: float = 1e-6
    mp_refine_times: int = 5
    stationarity_grid: int = 201
    adjoint_steps: int = 1000
    jobs: int = 1

    def tol(self, name: str) -> float:
        return float(self.tolerances.get(name, DEFAULT_TOLERANCES[name]))


# ---------------------------------------------------------------------------
# multiplier sets


def _scale_path(path, c: float):
    segs = []
    for s in path.segments:
        fn = lambda ts, f=s.fn, c=c: c * f(ts)
        dfn = None if s.dfn is None else (lambda ts, d=s.dfn, c=c: c * d(ts))
        segs.append(_Segment(s.a, s.b, fn, dfn, s.prefer_midpoint_rate))
    return type(path)(path.T, path.corners, segs, path.dim)


@dataclass(frozen=True)
class MultiplierSet:
    """Objective weights, constraint multipliers, and the adjoint path."""

    theta: np.ndarray
    lam: np.ndarray
    mu: np.ndarray
    adjoint: PiecewiseC1Path

    @staticmethod
    def make(theta, lam, mu, adjoint: PiecewiseC1Path) -> "MultiplierSet":
        return MultiplierSet(
            np.atleast_1d(np.asarray(theta, dtype=float)),
            np.asarray(lam, dtype=float).reshape(-1),
            np.asarray(mu, dtype=float).reshape(-1), adjoint)

    def multiplier_norm(self) -> float:
        return float(np.sqrt(np.sum(self.theta ** 2) + np.sum(self.lam ** 2)
                             + np.sum(self.mu ** 2)))

    def scaled(self, c: float) -> "MultiplierSet":
        if c <= 0.0:
            raise PontryaginError("multiplier scaling must be positive")
        return MultiplierSet(c * self.theta, c * self.lam, c * self.mu,
                             _scale_path(self.adjoint, c))

    def normalized(self) -> "MultiplierSet":
        nrm = self.multiplier_norm()
        if nrm == 0.0:
            raise PontryaginError("cannot normalize an all-zero multiplier set")
        return self.scaled(1.0 / nrm)

    def to_json(self, samples_per_segment: int = tr.NODES_PER_SEGMENT) -> dict:
        return {
            "theta": self.theta.tolist(),
            "lambda": self.lam.tolist(),
            "mu": self.mu.tolist(),
            "adjoint": tr.path_to_json(self.adjoint, samples_per_segment),
        }


# ---------------------------------------------------------------------------
# Hamiltonians


def hamiltonian_mayer(prob: BolzaProblem, t: float, x, u, p) -> float:
    """p . f(t, x, u): the Hamiltonian when objectives are terminal-only."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    u = np.atleast_1d(np.asarray(u, dtype=float))
    p = np.atleast_1d(np.asarray(p, dtype=float))
    return float(np.dot(p, prob.dynamics(t, x, u)))


def hamiltonian_bolza(prob: BolzaProblem, t: float, x, u, p, theta) -> float:
    """Weighted running objectives plus p . f."""
    val = hamiltonian_mayer(prob, t, x, u, p)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    u = np.atleast_1d(np.asarray(u, dtype=float))
    for th, f in zip(np.atleast_1d(theta), prob.running):
        if th != 0.0:
            val += float(th) * float(f(t, x, u))
    return float(val)


def _ham_batch(prob, theta, ts, xs, us, ps):
    fs = prob.dynamics.value_batch(ts, xs, us)
    H = np.einsum("mi,mi->m", ps, fs)
    for th, f in zip(theta, prob.running):
        if th != 0.0:
            H = H + th * f.value_batch(ts, xs, us)
    return H


def _ham_candidates(prob, theta, t, x, p, grid):
    """Hamiltonian at one (t, x, p) over every row of a candidate matrix."""
    uT = grid.T
    count = grid.shape[0]
    vals = np.zeros(count)
    for i, f in enumerate(prob.dynamics.fields):
        if p[i] != 0.0:
            vals = vals + p[i] * np.broadcast_to(f(t, x, uT), (count,))
    for th, f in zip(theta, prob.running):
        if th != 0.0:
            vals = vals + th * np.broadcast_to(f(t, x, uT), (count,))
    return vals


def _weighted_grad_x(prob, theta, ts, xs, us):
    out = np.zeros((len(ts), prob.n))
    for th, f in zip(theta, prob.running):
        if th != 0.0:
            out = out + th * f.grad_x_batch(ts, xs, us)
    return out


def _weighted_grad_x_rate(prob, theta, ts, xs, us, xdots, udots):
    out = np.zeros((len(ts), prob.n))
    for th, f in zip(theta, prob.running):
        if th != 0.0:
            out = out + th * f.grad_x_rate_batch(ts, xs, us, xdots, udots)
    return out


def _weighted_grad_u(prob, theta, ts, xs, us, ps):
    fu = prob.dynamics.jac_u_batch(ts, xs, us)
    grad = np.einsum("mic,mi->mc", fu, ps)
    for th, f in zip(theta, prob.running):
        if th != 0.0:
            grad = grad + th * f.grad_u_batch(ts, xs, us)
    return grad


def terminal_adjoint(prob: BolzaProblem, xT, theta, lam=(), mu=()) -> np.ndarray:
    """Terminal adjoint value implied by the multiplier equation at x(T)."""
    xT = np.atleast_1d(np.asarray(xT, dtype=float))
    out = np.asarray(theta, dtype=float) @ prob.terminal_gradients(xT)
    if prob.m:
        out = out + np.asarray(lam, dtype=float) @ prob.ineq_gradients(xT)
    if prob.q:
        out = out + np.asarray(mu, dtype=float) @ prob.eq_gradients(xT)
    return out


# ---------------------------------------------------------------------------
# backward adjoint integration


def _seg_index(path, t: float) -> int:
    return int(np.clip(np.searchsorted(path.breaks, t, side="right") - 1,
                       0, len(path.segments) - 1))


def integrate_adjoint(prob: BolzaProblem, proc: Process, pT, theta,
                      n_steps: int = 1000) -> PiecewiseC1Path:
    """Backward RK4 for dp/dt = -(sum_i theta_i grad_x f0_i + (jac_x f)^T p).

    Integrates from p(T) = pT along the process; steps never cross a state
    or control corner.  The stored dense output is quintic with one-sided
    second derivatives from the chain rule, keeping the equation defect at
    fourth order in the step.
    """
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    p = np.atleast_1d(np.asarray(pT, dtype=float)).astype(float).copy()
    corners = proc.corners()
    breaks = np.concatenate(([0.0], corners, [proc.T]))
    state, control = proc.state, proc.control
    polys: list = [None] * (len(breaks) - 1)
    for i in range(len(breaks) - 1, 0, -1):
        a, b = float(breaks[i - 1]), float(breaks[i])
        span = b - a
        m = max(2, int(np.ceil(n_steps * span / prob.T)))
        ts = np.linspace(a, b, m + 1)
        h = span / m
        mids = ts[:-1] + 0.5 * h
        xseg = state.segments[_seg_index(state, 0.5 * (a + b))]
        useg = control.segments[_seg_index(control, 0.5 * (a + b))]
        xs, us = xseg.fn(ts), useg.fn(ts)
        xm, um = xseg.fn(mids), useg.fn(mids)
        A_nodes = prob.dynamics.jac_x_batch(ts, xs, us)
        A_mids = prob.dynamics.jac_x_batch(mids, xm, um)
        a_nodes = _weighted_grad_x(prob, theta, ts, xs, us)
        a_mids = _weighted_grad_x(prob, theta, mids, xm, um)
        ps = np.empty((m + 1, prob.n))
        ps[m] = p
        for j in range(m, 0, -1):
            k1 = -(a_nodes[j] + A_nodes[j].T @ p)
            k2 = -(a_mids[j - 1] + A_mids[j - 1].T @ (p - 0.5 * h * k1))
            k3 = -(a_mids[j - 1] + A_mids[j - 1].T @ (p - 0.5 * h * k2))
            k4 = -(a_nodes[j - 1] + A_nodes[j - 1].T @ (p - h * k3))
            p = p - (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            ps[j - 1] = p
        if not np.all(np.isfinite(ps)):
            raise PontryaginError("adjoint integration produced non-finite values")
        dps = -(a_nodes + np.einsum("mij,mi->mj", A_nodes, ps))
        dxs = prob.dynamics.value_batch(ts, xs, us)
        du_nodes, du_mids = _control_rates(useg, ts, mids, control.dim)

        def d2_at(sel, du):
            arate = _weighted_grad_x_rate(prob, theta, ts[sel], xs[sel], us[sel],
                                          dxs[sel], du)
            Arate = prob.dynamics.jac_x_rate_batch(ts[sel], xs[sel], us[sel],
                                                   dxs[sel], du)
            return -(arate + np.einsum("mij,mi->mj", Arate, ps[sel])
                     + np.einsum("mij,mi->mj", A_nodes[sel], dps[sel]))

        if useg.dfn is None or useg.prefer_midpoint_rate:
            d2l = d2_at(slice(None, -1), du_mids)
            d2r = d2_at(slice(1, None), du_mids)
        else:
            d2 = d2_at(slice(None), du_nodes)
            d2l, d2r = d2[:-1], d2[1:]
        polys[i - 1] = tr.quintic_hermite_poly(ts, ps, dps, d2l, d2r)
    return tr.path_from_polys(PiecewiseC1Path, polys, proc.T, corners, prob.n)


# ---------------------------------------------------------------------------
# condition reports


@dataclass(frozen=True)
class ConditionResult:
    name: str
    residual: float
    tol: float
    passed: bool
    argmax_t: float | None = None
    argmax_control: np.ndarray | None = None
    index: int | None = None

    def to_json(self) -> dict:
        out = {
            "residual": self.residual,
            "tol": self.tol,
            "pass": self.passed,
            "argmax_t": self.argmax_t,
            "argmax_control": None if self.argmax_control is None
            else np.asarray(self.argmax_control).tolist(),
        }
        if self.index is not None:
            out["index"] = self.index
        return out


@dataclass(frozen=True)
class ConditionReport:
    results: tuple[ConditionResult, ...]
    passed: bool

    def __getitem__(self, name: str) -> ConditionResult:
        for r in self.results:
            if r.name == name:
                return r
        raise KeyError(name)

    def failed(self) -> list[str]:
        return [r.name for r in self.results if not r.passed]

    def residuals(self) -> dict:
        return {r.name: r.residual for r in self.results}

    def to_json(self) -> dict:
        return {"pass": self.passed,
                "conditions": {r.name: r.to_json() for r in self.results}}

    def summary_lines(self) -> list[str]:
        lines = []
        for r in self.results:
            mark = "pass" if r.passed else "FAIL"
            lines.append(f"{r.name:25s} residual {r.residual: .3e}  "
                         f"tol {r.tol:.0e}  {mark}")
        return lines


# ---------------------------------------------------------------------------
# maximization of the Hamiltonian over the control set


_INVPHI = (math.sqrt(5.0) - 1.0) / 2.0


def _golden_max(fn, lo: float, hi: float, iters: int = 70):
    a, b = float(lo), float(hi)
    best_x, best_f = a, fn(a)
    fb = fn(b)
    if fb > best_f:
        best_x, best_f = b, fb
    c = b - _INVPHI * (b - a)
    d = a + _INVPHI * (b - a)
    fc, fd = fn(c), fn(d)
    for _ in range(iters):
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - _INVPHI * (b - a)
            fc = fn(c)
        else:
            a, c, fc = c, d, fd
            d = a + _INVPHI * (b - a)
            fd = fn(d)
        if b - a < 1e-12 * (1.0 + abs(a) + abs(b)):
            break
    for xx, ff in ((c, fc), (d, fd)):
        if ff > best_f:
            best_x, best_f = xx, ff
    return best_x, best_f


def _refine_candidate(prob, theta, t, x, p, u_base, delta, bounds):
    """Coordinate golden-section polish of the Hamiltonian around u_base."""
    u = np.array(u_base, dtype=float)
    best = hamiltonian_bolza(prob, t, x, u, p, theta)
    for _ in range(2):
        for j in range(len(u)):
            lo, hi = u[j] - delta[j], u[j] + delta[j]
            if bounds is not None:
                lo, hi = max(lo, bounds[0][j]), min(hi, bounds[1][j])
            if hi <= lo:
                continue

            def fj(v, j=j):
                w = u.copy()
                w[j] = v
                return hamiltonian_bolza(prob, t, x, w, p, theta)

            v, f = _golden_max(fj, lo, hi)
            if f > best:
                best, u[j] = f, v
    return u, best


def maximize_hamiltonian(prob: BolzaProblem, t: float, x, p, theta,
                         u0=None, cfg: CheckConfig | None = None):
    """Maximize the weighted Hamiltonian over the control set at one point.

    Returns (maximizer, value).  Boxes search a candidate stencil and polish
    by golden section; finite sets are exhaustive; free sets run a
    quasi-Newton ascent from a few deterministic starts.
    """
    cfg = cfg or CheckConfig()
    cs = prob.control_set
    x = np.atleast_1d(np.asarray(x, dtype=float))
    p = np.atleast_1d(np.asarray(p, dtype=float))
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    if cs.kind == "finite":
        vals = _ham_candidates(prob, theta, t, x, p, cs.points)
        c = int(np.argmax(vals))
        return cs.points[c].copy(), float(vals[c])
    if cs.kind == "box":
        grid = cs.candidate_grid(cfg.control_grid)
        vals = _ham_candidates(prob, theta, t, x, p, grid)
        c = int(np.argmax(vals))
        delta = (cs.upper - cs.lower) / (cfg.control_grid - 1)
        return _refine_candidate(prob, theta, t, x, p, grid[c], delta,
                                 (cs.lower, cs.upper))
    k = cs.dim
    u0 = np.zeros(k) if u0 is None else np.atleast_1d(np.asarray(u0, dtype=float))

    def neg(u):
        return -hamiltonian_bolza(prob, t, x, u, p, theta)

    def neg_grad(u):
        g = prob.dynamics.jac_u(t, x, u).T @ p
        for th, f in zip(theta, prob.running):
            if th != 0.0:
                g = g + th * f.grad_u(t, x, u)
        return -g

    best_u, best_v = u0.copy(), -neg(u0)
    starts = [u0]
    for j in range(k):
        e = np.zeros(k)
        e[j] = cfg.free_radius
        starts.extend([u0 + e, u0 - e])
    for s in starts:
        try:
            res = minimize(neg, s, jac=neg_grad, method="BFGS",
                           options={"gtol": 1e-12, "maxiter": 200})
        except (ValueError, FloatingPointError):
            continue
        if np.all(np.isfinite(res.x)) and -res.fun > best_v:
            best_u, best_v = res.x, -res.fun
    return best_u, float(best_v)


def argmax_hamiltonian_batch(prob: BolzaProblem, ts, xs, ps, theta,
                             cfg: CheckConfig | None = None, us0=None) -> np.ndarray:
    """Per-time Hamiltonian maximizer, vectorized over a time grid.

    Box and free sets run coordinate sweeps over a value stencil with a
    parabolic peak step per axis (exact for quadratic Hamiltonians); finite
    sets are exhaustive.  Returns an array of shape (len(ts), k).
    """
    cfg = cfg or CheckConfig()
    cs = prob.control_set
    mlen = len(ts)
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    if cs.kind == "finite":
        best = np.full(mlen, -np.inf)
        arg = np.zeros(mlen, dtype=int)
        for c, zeta in enumerate(cs.points):
            H = _ham_batch(prob, theta, ts, xs,
                           np.broadcast_to(zeta, (mlen, cs.dim)), ps)
            b = H > best
            best[b], arg[b] = H[b], c
        return cs.points[arg].copy()
    k = cs.dim
    if us0 is not None:
        us = np.array(us0, dtype=float).reshape(mlen, k).copy()
    elif cs.kind == "box":
        us = np.tile(0.5 * (cs.lower + cs.upper), (mlen, 1))
    else:
        us = np.zeros((mlen, k))
    if cs.kind == "box":
        us = np.clip(us, cs.lower, cs.upper)
    npts = cfg.control_grid
    for _ in range(3):
        moved = 0.0
        for j in range(k):
            if cs.kind == "box":
                axis = np.linspace(cs.lower[j], cs.upper[j], npts)
                vals_j = np.broadcast_to(axis[:, None], (npts, mlen))
            else:
                offs = np.linspace(-cfg.free_radius, cfg.free_radius, npts)
                vals_j = us[:, j][None, :] + offs[:, None]
            H_mat = np.empty((npts, mlen))
            uc = us.copy()
            for c in range(npts):
                uc[:, j] = vals_j[c]
                H_mat[c] = _ham_batch(prob, theta, ts, xs, uc, ps)
            c_star = np.argmax(H_mat, axis=0)
            cols = np.arange(mlen)
            v_new = vals_j[c_star, cols].copy()
            interior = (c_star > 0) & (c_star < npts - 1)
            if np.any(interior):
                cm = np.clip(c_star, 1, npts - 2)
                Hm = H_mat[cm - 1, cols]
                H0 = H_mat[cm, cols]
                Hp = H_mat[cm + 1, cols]
                denom = Hm + Hp - 2.0 * H0
                step = vals_j[1, 0] - vals_j[0, 0] if cs.kind == "box" \
                    else (2.0 * cfg.free_radius) / (npts - 1)
                with np.errstate(divide="ignore", invalid="ignore"):
                    shift = np.where(denom < -1e-300,
                                     step * (Hm - Hp) / (2.0 * denom), 0.0)
                shift = np.clip(shift, -step, step)
                v_new[interior] += shift[interior]
            if cs.kind == "box":
                v_new = np.clip(v_new, cs.lower[j], cs.upper[j])
            moved = max(moved, float(np.max(np.abs(us[:, j] - v_new))))
            us[:, j] = v_new
        if moved < 1e-12:
            break
    return us


# ---------------------------------------------------------------------------
# condition checks


def _grid_tasks(prob, proc, padj, dpad, cfg):
    T = prob.T
    corners = tr.merge_corners(
        np.concatenate([proc.corners(), padj.corners]), T)
    base = np.linspace(0.0, T, cfg.time_grid)
    breaks = np.concatenate(([0.0], corners, [T]))
    tasks = []
    for i in range(len(breaks) - 1):
        a, b = float(breaks[i]), float(breaks[i + 1])
        inner = base[(base > a) & (base < b)]
        ts = np.concatenate(([a], inner, [b]))
        mid = 0.5 * (a + b)
        idx = {"si": _seg_index(proc.state, mid), "ci": _seg_index(proc.control, mid),
               "pi": _seg_index(padj, mid), "di": _seg_index(dpad, mid)}
        if cfg.jobs > 1 and len(ts) > 64:
            for chunk in np.array_split(ts, min(cfg.jobs * 2, len(ts) // 32)):
                if len(chunk):
                    tasks.append({"ts": chunk, **idx})
        else:
            tasks.append({"ts": ts, **idx})
    return corners, tasks


def _condition_scan(prob, proc, padj, dpad, theta, cfg, task):
    ts = task["ts"]
    xs = proc.state.segments[task["si"]].fn(ts)
    us = proc.control.segments[task["ci"]].fn(ts)
    ps = padj.segments[task["pi"]].fn(ts)
    dps = dpad.segments[task["di"]].fn(ts)

    A = prob.dynamics.jac_x_batch(ts, xs, us)
    rows = dps + _weighted_grad_x(prob, theta, ts, xs, us) \
        + np.einsum("mij,mi->mj", A, ps)
    norms = np.linalg.norm(rows, axis=1)
    j = int(np.argmax(norms))
    out = {"ts": ts, "xs": xs, "us": us, "ps": ps,
           "ae": float(norms[j]), "ae_t": float(ts[j]), "ae_u": us[j].copy()}

    H0 = _ham_batch(prob, theta, ts, xs, us, ps)
    imp = np.full(len(ts), -np.inf)
    cand = np.zeros(len(ts), dtype=int)
    cs = prob.control_set
    if cs.kind == "free":
        offs = np.linspace(-cfg.free_radius, cfg.free_radius, cfg.control_grid)
        for j_ax in range(cs.dim):
            for c, o in enumerate(offs):
                uc = us.copy()
                uc[:, j_ax] += o
                gain = _ham_batch(prob, theta, ts, xs, uc, ps) - H0
                better = gain > imp
                imp[better] = gain[better]
                cand[better] = j_ax * len(offs) + c
        gn = np.linalg.norm(_weighted_grad_u(prob, theta, ts, xs, us, ps), axis=1)
        g = int(np.argmax(gn))
        out.update(gn=float(gn[g]), gn_t=float(ts[g]), gn_u=us[g].copy())
    else:
        grid = cs.candidate_grid(cfg.control_grid)
        for c, zeta in enumerate(grid):
            uc = np.broadcast_to(zeta, (len(ts), cs.dim))
            gain = _ham_batch(prob, theta, ts, xs, uc, ps) - H0
            better = gain > imp
            imp[better] = gain[better]
            cand[better] = c
        out.update(gn=0.0, gn_t=None, gn_u=None)
    out.update(imp=imp, cand=cand, H0=H0)
    return out


def check_conditions(prob: BolzaProblem, proc: Process, mult: MultiplierSet,
                     cfg: CheckConfig | None = None) -> ConditionReport:
    """Residuals and verdicts for every first-order optimality condition.

    The time grid is cfg.time_grid uniform points joined with all corners,
    and corner values are checked from both sides.
    """
    cfg = cfg or CheckConfig()
    theta = np.atleast_1d(np.asarray(mult.theta, dtype=float))
    lam = np.asarray(mult.lam, dtype=float).reshape(-1)
    mu = np.asarray(mult.mu, dtype=float).reshape(-1)
    padj = mult.adjoint
    dpad = padj.extended_derivative()
    results = []

    nrm = mult.multiplier_norm()
    results.append(_make_result("nontriviality", 1.0 - nrm, cfg))

    si = 0.0
    si_idx = None
    if theta.size and -np.min(theta) > si:
        si, si_idx = float(-np.min(theta)), int(np.argmin(theta))
    if lam.size and -np.min(lam) > si:
        si, si_idx = float(-np.min(lam)), prob.l + int(np.argmin(lam))
    results.append(_make_result("multiplier_signs", max(0.0, si), cfg, index=si_idx))

    xT = proc.state(proc.T)
    gvals = prob.ineq_values(xT)
    if lam.size:
        slack = np.abs(lam * gvals)
        a = int(np.argmax(slack))
        results.append(_make_result("complementary_slackness", float(slack[a]),
                                    cfg, argmax_t=proc.T, index=a))
    else:
        results.append(_make_result("complementary_slackness", 0.0, cfg))

    tc_vec = terminal_adjoint(prob, xT, theta, lam, mu) - padj(proc.T)
    results.append(_make_result("transversality", float(np.linalg.norm(tc_vec)),
                                cfg, argmax_t=proc.T))

    corners, tasks = _grid_tasks(prob, proc, padj, dpad, cfg)
    worker = lambda task: _condition_scan(prob, proc, padj, dpad, theta, cfg, task)
    if cfg.jobs > 1 and len(tasks) > 1:
        with ThreadPoolExecutor(max_workers=cfg.jobs) as exe:
            scans = list(exe.map(worker, tasks))
    else:
        scans = [worker(t) for t in tasks]

    ae, ae_t, ae_u = 0.0, None, None
    for s in scans:
        if s["ae"] > ae:
            ae, ae_t, ae_u = s["ae"], s["ae_t"], s["ae_u"]
    results.append(_make_result("adjoint_equation", ae, cfg,
                                argmax_t=ae_t, argmax_control=ae_u))

    results.append(_mp_result(prob, theta, cfg, scans))

    ch, ch_t = 0.0, None
    for tau in corners:
        ul, ur = proc.control.left_value(tau), proc.control.right_value(tau)
        pl, pr = padj.left_value(tau), padj.right_value(tau)
        xv = proc.state(tau)
        jump = abs(hamiltonian_bolza(prob, tau, xv, ul, pl, theta)
                   - hamiltonian_bolza(prob, tau, xv, ur, pr, theta))
        if jump > ch:
            ch, ch_t = float(jump), float(tau)
    results.append(_make_result("hamiltonian_continuity", ch, cfg, argmax_t=ch_t))

    results = tuple(results)
    return ConditionReport(results, all(r.passed for r in results))


def _make_result(name, residual, cfg, argmax_t=None, argmax_control=None,
                 index=None) -> ConditionResult:
    tol = cfg.tol(name)
    return ConditionResult(name, float(residual), tol, bool(residual <= tol),
                           argmax_t, argmax_control, index)


def _mp_result(prob, theta, cfg, scans) -> ConditionResult:
    cs = prob.control_set
    order = []
    for s in scans:
        for j in np.argsort(s["imp"])[::-1][:cfg.mp_refine_times]:
            order.append((float(s["imp"][j]), s, int(j)))
    order.sort(key=lambda r: -r[0])
    res, res_t, res_u = 0.0, None, None
    for gain, s, j in order:
        if gain > res:
            res, res_t = gain, float(s["ts"][j])
            if cs.kind == "free":
                offs = np.linspace(-cfg.free_radius, cfg.free_radius, cfg.control_grid)
                ax, c = divmod(int(s["cand"][j]), len(offs))
                u = s["us"][j].copy()
                u[ax] += offs[c]
                res_u = u
            elif cs.kind == "box":
                res_u = cs.candidate_grid(cfg.control_grid)[s["cand"][j]].copy()
            else:
                res_u = cs.points[s["cand"][j]].copy()
    if cs.kind != "finite":
        if cs.kind == "box":
            delta = (cs.upper - cs.lower) / (cfg.control_grid - 1)
            bounds = (cs.lower, cs.upper)
        else:
            delta = np.full(cs.dim, 2.0 * cfg.free_radius / (cfg.control_grid - 1))
            bounds = None
        for gain, s, j in order[:cfg.mp_refine_times]:
            t = float(s["ts"][j])
            if cs.kind == "free":
                offs = np.linspace(-cfg.free_radius, cfg.free_radius, cfg.control_grid)
                ax, c = divmod(int(s["cand"][j]), len(offs))
                base = s["us"][j].copy()
                base[ax] += offs[c]
            else:
                base = cs.candidate_grid(cfg.control_grid)[s["cand"][j]].copy()
            u_ref, h_ref = _refine_candidate(prob, theta, t, s["xs"][j], s["ps"][j],
                                             base, delta, bounds)
            gain_ref = h_ref - float(s["H0"][j])
            if gain_ref > res:
                res, res_t, res_u = gain_ref, t, u_ref
    for s in scans:
        if s.get("gn", 0.0) > res:
            res, res_t, res_u = s["gn"], s["gn_t"], s["gn_u"]
    return _make_result("hamiltonian_maximum", max(0.0, res), cfg,
                        argmax_t=res_t, argmax_control=res_u)


# ---------------------------------------------------------------------------
# multiplier recovery


def minimize_on_sphere(mat, nonneg, seed: int = 0, n_starts: int = 32,
                       iters: int = 400):
    """min ||mat z|| over unit vectors z with z_i >= 0 wherever nonneg[i].

    Multi-start projected gradient descent; deterministic for a fixed seed.
    Returns (z, residual).
    """
    mat = np.asarray(mat, dtype=float)
    d = mat.shape[1]
    nonneg = np.asarray(nonneg, dtype=bool)
    gram = mat.T @ mat if mat.size else np.zeros((d, d))
    lip = float(np.linalg.norm(gram, 2))
    if lip == 0.0:
        z = np.ones(d) / math.sqrt(d)
        return z, 0.0
    rng = np.random.default_rng(seed)
    starts = [np.ones(d)] + [np.eye(d)[i] for i in range(d)]
    starts += list(rng.standard_normal((n_starts, d)))
    best_z, best_r = None, np.inf
    for z0 in starts:
        z = np.array(z0, dtype=float)
        z[nonneg] = np.abs(z[nonneg])
        nz = np.linalg.norm(z)
        if nz < 1e-300:
            continue
        z = z / nz
        for _ in range(iters):
            step = z - (gram @ z) / lip
            step[nonneg] = np.maximum(step[nonneg], 0.0)
            nz = np.linalg.norm(step)
            if nz < 1e-14:
                break
            step = step / nz
            if np.linalg.norm(step - z) < 1e-15:
                z = step
                break
            z = step
        r = float(np.sqrt(max(float(z @ gram @ z), 0.0)))
        if best_z is None or r < best_r:
            best_z, best_r = z, r
    return best_z, best_r


def recover_multipliers(prob: BolzaProblem, proc: Process, gauge: str = "unit",
                        theta_index: int = 0, cfg: CheckConfig | None = None,
                        seed: int = 0):
    """Fit multipliers to a candidate and attach a condition report.

    The adjoint is parametrized by one backward solve per multiplier
    component with the matching terminal gradient, so the terminal equation
    holds identically; the least squares then minimizes Hamiltonian
    stationarity at interior control points plus a complementary-slackness
    penalty, with the sign constraints enforced by the gauge solver.
    Returns (MultiplierSet, ConditionReport).
    """
    cfg = cfg or CheckConfig()
    l, m, q = prob.l, prob.m, prob.q
    d = l + m + q
    xT = proc.state(proc.T)
    g0 = prob.terminal_gradients(xT)
    gi = prob.ineq_gradients(xT)
    he = prob.eq_gradients(xT)
    gvals = prob.ineq_values(xT)

    basis = []
    for i in range(l):
        e = np.zeros(l)
        e[i] = 1.0
        basis.append(integrate_adjoint(prob, proc, g0[i], e, cfg.adjoint_steps))
    zero_theta = np.zeros(l)
    for a_ in range(m):
        basis.append(integrate_adjoint(prob, proc, gi[a_], zero_theta,
                                       cfg.adjoint_steps))
    for b_ in range(q):
        basis.append(integrate_adjoint(prob, proc, he[b_], zero_theta,
                                       cfg.adjoint_steps))

    ts = np.linspace(0.0, prob.T, cfg.stationarity_grid)
    xs = proc.state(ts)
    us = proc.control(ts)
    cs = prob.control_set
    if cs.kind == "finite":
        mask = np.zeros(len(ts), dtype=bool)
    elif cs.kind == "box":
        margin = 1e-6 * (cs.upper - cs.lower)
        mask = np.all(us > cs.lower + margin, axis=1) \
            & np.all(us < cs.upper - margin, axis=1)
    else:
        mask = np.ones(len(ts), dtype=bool)

    blocks = []
    if np.any(mask):
        tsm, xsm, usm = ts[mask], xs[mask], us[mask]
        fu = prob.dynamics.jac_u_batch(tsm, xsm, usm)
        cols = np.zeros((len(tsm), prob.k, d))
        for dim, bp in enumerate(basis):
            cols[:, :, dim] = np.einsum("mic,mi->mc", fu, bp(tsm))
        for i in range(l):
            cols[:, :, i] += prob.running[i].grad_u_batch(tsm, xsm, usm)
        blocks.append(cols.reshape(-1, d) / math.sqrt(len(tsm)))
    for a_ in range(m):
        row = np.zeros(d)
        row[l + a_] = gvals[a_]
        blocks.append(row[None, :])
    mat = np.vstack(blocks) if blocks else np.zeros((1, d))

    nonneg = np.array([True] * (l + m) + [False] * q)
    z_unit, _ = minimize_on_sphere(mat, nonneg, seed=seed)
    if gauge in ("unit", "unit-norm"):
        z = z_unit
    elif gauge in ("theta1", "theta_j_equals_1"):
        j = int(theta_index)
        if not 0 <= j < l:
            raise PontryaginError(f"theta gauge index {j} out of range")
        if abs(z_unit[j]) < 1e-10:
            raise PontryaginError(
                "gauge infeasible: the requested objective weight is pinned at zero")
        if d == 1:
            z = np.ones(1)
        else:
            keep = [c for c in range(d) if c != j]
            lower = np.array([0.0 if nonneg[c] else -np.inf for c in keep])
            sol = lsq_linear(mat[:, keep], -mat[:, j],
                             bounds=(lower, np.full(len(keep), np.inf)))
            z = np.empty(d)
            z[j] = 1.0
            z[keep] = sol.x
    else:
        raise PontryaginError(f"unknown gauge {gauge!r}")

    theta, lam, mu = z[:l], z[l:l + m], z[l + m:]
    pT = terminal_adjoint(prob, xT, theta, lam, mu)
    padj = integrate_adjoint(prob, proc, pT, theta, cfg.adjoint_steps)
    mult = MultiplierSet.make(theta, lam, mu, padj)
    report = check_conditions(prob, proc, mult, cfg)
    return mult, report
