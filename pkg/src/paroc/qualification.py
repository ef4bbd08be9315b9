"""Independence tests on terminal gradient stacks.

Five checks that rule out degenerate multiplier sets: positive independence
of the active terminal constraint gradients (optionally together with the
objective gradients), linear independence of those gradients composed with
the control Jacobian of the dynamics (optionally with the dropped-objective
rows added), and surjectivity of the control Jacobian somewhere along the
candidate.  Every failing report carries an explicit violating coefficient
vector that can be re-verified against the stack.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import trajectory as tr
from .pontryagin import minimize_on_sphere
from .problem import BolzaProblem, Process

__all__ = [
    "CQ_TOL", "ACT_TOL", "QualificationError", "GradientStack", "CQReport",
    "check_constraint_gradients", "check_objective_constraint_gradients",
    "check_constraint_control_rows", "check_objective_control_rows",
    "check_control_surjectivity",
]

CQ_TOL = 1e-8
ACT_TOL = 1e-7


class QualificationError(ValueError):
    pass


@dataclass(frozen=True)
class GradientStack:
    """Labeled gradient rows living in one common space."""

    labels: tuple
    rows: np.ndarray

    def __post_init__(self):
        rows = np.asarray(self.rows, dtype=float)
        if rows.ndim != 2:
            raise QualificationError("rows must form a 2d array")
        labels = tuple(self.labels)
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "labels", labels)
        if len(labels) != len(rows):
            raise QualificationError("one label per row required")
        if len(set(labels)) != len(labels):
            raise QualificationError("row labels must be unique")

    @property
    def dim(self) -> int:
        return self.rows.shape[1]

    def __len__(self):
        return len(self.labels)


@dataclass(frozen=True)
class CQReport:
    which: str
    holds: bool
    certificate: dict
    stack: GradientStack
    index: int | None = None

    def combination_norm(self) -> float | None:
        """Recompute the norm of the certified vanishing combination."""
        coeffs = self.certificate.get("coefficients")
        if coeffs is None:
            return None
        c = np.asarray(coeffs, dtype=float)
        return float(np.linalg.norm(self.stack.rows.T @ c))

    def to_json(self) -> dict:
        out = {"which": self.which, "holds": self.holds,
               "certificate": dict(self.certificate)}
        if self.index is not None:
            out["index"] = self.index
        return out


def _failing_report(which, stack, coeffs, cert, index=None):
    coeffs = np.asarray(coeffs, dtype=float)
    coeffs = coeffs / np.linalg.norm(coeffs)
    cert = dict(cert)
    cert["coefficients"] = [float(c) for c in coeffs]
    cert["labels"] = list(stack.labels)
    cert["combination_norm"] = float(np.linalg.norm(stack.rows.T @ coeffs))
    return CQReport(which, False, cert, stack, index)


def _positive_independence(which, stack, n_signed, tol, seed=0):
    """Decide whether every vanishing combination with nonnegative
    coefficients on the first n_signed rows is the zero one.

    The unrestricted block is handled exactly: a rank test first, then the
    signed rows are projected onto its orthogonal complement and the
    remaining minimization runs over the nonnegative part of the sphere.
    """
    rows = stack.rows
    top = float(np.max(np.linalg.norm(rows, axis=1))) if len(rows) else 0.0
    limit = tol * (top + 1.0)
    if len(rows) == 0:
        return CQReport(which, True, {"min_combination_norm": None,
                                      "tol": limit, "note": "empty stack"},
                        stack)
    signed, free = rows[:n_signed], rows[n_signed:]
    basis = np.zeros((0, rows.shape[1]))
    if len(free):
        u_f, s_f, vt_f = np.linalg.svd(free, full_matrices=True)
        smax_f = float(s_f[0]) if s_f.size else 0.0
        rank = int(np.sum(s_f > tol * (smax_f + 1.0)))
        if rank < len(free):
            coeffs = np.concatenate([np.zeros(n_signed), u_f[:, -1]])
            return _failing_report(which, stack, coeffs, {"tol": limit})
        basis = vt_f[:rank]
        if n_signed == 0:
            return CQReport(which, True,
                            {"min_combination_norm": float(s_f[-1]),
                             "tol": limit}, stack)
    proj = signed - (signed @ basis.T) @ basis if len(basis) else signed
    z, res = minimize_on_sphere(proj.T, np.ones(n_signed, dtype=bool),
                                seed=seed)
    if res > limit:
        return CQReport(which, True, {"min_combination_norm": float(res),
                                      "tol": limit}, stack)
    coeffs = np.asarray(z, dtype=float)
    if len(free):
        extra, *_ = np.linalg.lstsq(free.T, -(signed.T @ coeffs), rcond=None)
        coeffs = np.concatenate([coeffs, extra])
    return _failing_report(which, stack, coeffs, {"tol": limit})


def _terminal_stack(prob: BolzaProblem, xT, include_objectives: bool,
                    act_tol: float):
    labels, rows = [], []
    if include_objectives:
        grads = prob.terminal_gradients(xT)
        for i in range(prob.l):
            labels.append(f"objective[{i}]")
            rows.append(grads[i])
    vals = prob.ineq_values(xT)
    gi = prob.ineq_gradients(xT)
    for a in range(prob.m):
        # complementarity: only constraints active at xT may carry weight
        if vals[a] <= act_tol:
            labels.append(f"ineq[{a}]")
            rows.append(gi[a])
    n_signed = len(rows)
    ge = prob.eq_gradients(xT)
    for b in range(prob.q):
        labels.append(f"eq[{b}]")
        rows.append(ge[b])
    arr = np.array(rows, dtype=float).reshape(len(rows), prob.n)
    return GradientStack(tuple(labels), arr), n_signed


def check_constraint_gradients(prob: BolzaProblem, xT, tol: float = CQ_TOL,
                               act_tol: float = ACT_TOL,
                               seed: int = 0) -> CQReport:
    """Positive independence of the active terminal constraint gradients.

    Holds when no combination with nonnegative weights on the active
    inequality gradients and free weights on the equality gradients vanishes,
    except the zero one.
    """
    stack, n_signed = _terminal_stack(prob, xT, False, act_tol)
    return _positive_independence("active-constraint-gradients", stack,
                                  n_signed, tol, seed)


def check_objective_constraint_gradients(prob: BolzaProblem, xT,
                                         tol: float = CQ_TOL,
                                         act_tol: float = ACT_TOL,
                                         seed: int = 0) -> CQReport:
    """As check_constraint_gradients with the objective gradients included,
    also under nonnegative weights."""
    stack, n_signed = _terminal_stack(prob, xT, True, act_tol)
    return _positive_independence("objective-and-constraint-gradients",
                                  stack, n_signed, tol, seed)


def _row_independence(which, stack, tol, index=None, extra=None):
    rows = stack.rows
    r, d = rows.shape
    if r == 0:
        cert = {"smallest_singular_value": None, "tol": tol,
                "note": "empty stack"}
        if extra:
            cert.update(extra)
        return CQReport(which, True, cert, stack, index)
    u_full, s, _ = np.linalg.svd(rows, full_matrices=True)
    smax = float(s[0])
    limit = tol * (smax + 1.0)
    smin = float(s[-1]) if r <= d else 0.0
    cert = {"smallest_singular_value": smin,
            "largest_singular_value": smax, "tol": limit}
    if extra:
        cert.update(extra)
    if r <= d and smin > limit:
        return CQReport(which, True, cert, stack, index)
    return _failing_report(which, stack, u_full[:, -1], cert, index)


def _control_point(prob: BolzaProblem, proc: Process):
    """Terminal (x, u); the control set must contain a neighborhood of u."""
    cs = prob.control_set
    if cs.kind == "finite":
        raise QualificationError(
            "control-composed tests need a neighborhood of the terminal "
            "control; a finite control set has none")
    xT = proc.state(proc.T)
    uT = proc.control(proc.T)
    if cs.kind == "box" and not cs.interior_contains(uT):
        raise QualificationError(
            f"terminal control {uT} is not interior to the control box")
    return xT, uT


def _constraint_control_rows(prob, xT, d3f):
    labels, rows = [], []
    gi = prob.ineq_gradients(xT)
    for a in range(prob.m):
        labels.append(f"ineq[{a}]")
        rows.append(gi[a] @ d3f)
    ge = prob.eq_gradients(xT)
    for b in range(prob.q):
        labels.append(f"eq[{b}]")
        rows.append(ge[b] @ d3f)
    return labels, rows


def check_constraint_control_rows(prob: BolzaProblem, proc: Process,
                                  tol: float = CQ_TOL) -> CQReport:
    """Linear independence of the terminal constraint gradients composed
    with the control Jacobian of the dynamics."""
    xT, uT = _control_point(prob, proc)
    d3f = prob.dynamics.jac_u(prob.T, xT, uT)
    labels, rows = _constraint_control_rows(prob, xT, d3f)
    stack = GradientStack(tuple(labels),
                          np.array(rows, dtype=float).reshape(len(rows), prob.k))
    return _row_independence("constraint-control-rows", stack, tol)


def check_objective_control_rows(prob: BolzaProblem, proc: Process, j: int,
                                 include_running: bool = False,
                                 tol: float = CQ_TOL) -> CQReport:
    """Independence of the control-composed rows with the objective rows
    for every objective except j added.

    With include_running the control gradient of each running integrand is
    added to its objective row, which is the right stack when running terms
    are present.
    """
    if not 0 <= j < prob.l:
        raise QualificationError(f"objective index {j} out of range")
    xT, uT = _control_point(prob, proc)
    d3f = prob.dynamics.jac_u(prob.T, xT, uT)
    labels, rows = [], []
    gt = prob.terminal_gradients(xT)
    for i in range(prob.l):
        if i == j:
            continue
        row = gt[i] @ d3f
        if include_running:
            row = row + prob.running[i].grad_u(prob.T, xT, uT)
        labels.append(f"objective[{i}]")
        rows.append(row)
    clabels, crows = _constraint_control_rows(prob, xT, d3f)
    stack = GradientStack(tuple(labels + clabels),
                          np.array(rows + crows,
                                   dtype=float).reshape(len(rows + crows), prob.k))
    return _row_independence("objective-control-rows", stack, tol, index=j,
                             extra={"include_running": include_running})


def check_control_surjectivity(prob: BolzaProblem, proc: Process,
                               tol: float = CQ_TOL,
                               grid: int = 201) -> CQReport:
    """Look for a time where the control Jacobian of the dynamics has full
    row rank; the certificate records the witness time."""
    which = "control-jacobian-surjectivity"
    cs = prob.control_set
    if cs.kind == "finite":
        raise QualificationError(
            "surjectivity needs a neighborhood of the control values; a "
            "finite control set has none")
    empty = GradientStack((), np.zeros((0, prob.k)))
    if prob.k < prob.n:
        return CQReport(which, False,
                        {"note": "control dimension below state dimension",
                         "k": prob.k, "n": prob.n, "tol": tol}, empty)
    ts = tr.check_grid(prob.T, proc.corners(), grid)
    xs = proc.state(ts)
    us = proc.control(ts)
    jacs = prob.dynamics.jac_u_batch(ts, xs, us)
    svals = np.linalg.svd(jacs, compute_uv=False)
    margin = svals[:, -1] - tol * (svals[:, 0] + 1.0)
    if cs.kind == "box":
        ok = np.array([cs.interior_contains(u) for u in us])
        margin = np.where(ok, margin, -np.inf)
    i = int(np.argmax(margin))
    if not np.isfinite(margin[i]):
        return CQReport(which, False,
                        {"note": "no interior-control times on the grid",
                         "tol": tol}, empty)
    stack = GradientStack(tuple(f"dynamics[{r}]" for r in range(prob.n)),
                          jacs[i])
    cert = {"witness_time": float(ts[i]),
            "smallest_singular_value": float(svals[i, -1]),
            "largest_singular_value": float(svals[i, 0]),
            "tol": tol * (float(svals[i, 0]) + 1.0)}
    if margin[i] > 0.0:
        return CQReport(which, True, cert, stack)
    u_full, _, _ = np.linalg.svd(stack.rows, full_matrices=True)
    return _failing_report(which, stack, u_full[:, -1], cert)
