"""Reductions between problem forms.

Two constructions: (1) fixing one objective and turning the others into
terminal inequality constraints at reference levels, and (2) augmenting the
state with running-cost accumulators so every objective becomes terminal
only, together with the matching process lift and multiplier projection.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import exprdsl as ex
from . import trajectory as tr
from .pontryagin import MultiplierSet
from .problem import (AdmissibilityTolerances, BolzaProblem, Process,
                      ScalarField, VectorField, check_admissible,
                      _integrand_path)
from .trajectory import PiecewiseC1Path

__all__ = ["TransformError", "AugmentedProblem", "bolza_to_mayer",
           "lift_process", "project_multipliers", "fix_objective_problem"]


class TransformError(ValueError):
    pass


@dataclass(frozen=True)
class AugmentedProblem:
    """Terminal-only version of a source problem on the state (sigma, x).

    sigma accumulates the running objectives, so the augmented dynamics are
    (f0_1, ..., f0_l, f) and objective i becomes sigma_i + g0_i(x) at the
    final time.  sigma components are ordinary states; downstream checkers
    treat them like any other coordinate.
    """

    mayer: BolzaProblem
    source: BolzaProblem

    @property
    def sigma_dim(self) -> int:
        return self.source.l


def bolza_to_mayer(prob: BolzaProblem) -> AugmentedProblem:
    """Augment the state so all objectives are terminal-only."""
    l, n, k = prob.l, prob.n, prob.k
    dyn = [ex.shift_state(f.expr, l) for f in prob.running]
    dyn += [ex.shift_state(f.expr, l) for f in prob.dynamics.fields]
    terminal = tuple(
        ScalarField(ex.add(ex.StateVar(i), ex.shift_state(g.expr, l)),
                    l + n, k, prob.params, terminal=True)
        for i, g in enumerate(prob.terminal))
    ineq = tuple(ScalarField(ex.shift_state(g.expr, l), l + n, k, prob.params,
                             terminal=True) for g in prob.ineq)
    eq = tuple(ScalarField(ex.shift_state(h.expr, l), l + n, k, prob.params,
                           terminal=True) for h in prob.eq)
    omega = None
    if prob.omega is not None:
        lo, hi = prob.omega
        omega = (np.concatenate([np.full(l, -np.inf), lo]),
                 np.concatenate([np.full(l, np.inf), hi]))
    mayer = BolzaProblem(
        name=f"{prob.name}-augmented",
        T=prob.T, n=l + n, k=k, control_set=prob.control_set,
        xi0=np.concatenate([np.zeros(l), prob.xi0]),
        dynamics=VectorField(dyn, l + n, k, prob.params),
        running=tuple(ScalarField(ex.num(0.0), l + n, k, prob.params)
                      for _ in range(l)),
        terminal=terminal, ineq=ineq, eq=eq, omega=omega, params=prob.params)
    return AugmentedProblem(mayer=mayer, source=prob)


def lift_process(prob: BolzaProblem, proc: Process,
                 tol: AdmissibilityTolerances = AdmissibilityTolerances()
                 ) -> Process:
    """Attach accumulator states sigma_i(t) = int_0^t f0_i to a process."""
    rep = check_admissible(prob, proc, tol)
    if not rep.admissible:
        raise TransformError(
            f"cannot lift an inadmissible process (worst dynamics residual "
            f"{rep.dynamics_residual:.3e} at t={rep.worst_time:.6g})")
    integrand = _integrand_path(prob.running, proc)
    sigma = tr.reconstruct(integrand, np.zeros(prob.l))
    state = tr.stack_paths([sigma, proc.state], cls=PiecewiseC1Path)
    return Process(state=state, control=proc.control)


def project_multipliers(aug: AugmentedProblem, mult: MultiplierSet,
                        tol: float = 1e-6) -> MultiplierSet:
    """Drop the accumulator block from an augmented adjoint path.

    The leading adjoint components must sit at the objective weights for the
    projection to be meaningful; a larger deviation raises.
    """
    l, n = aug.source.l, aug.source.n
    P = mult.adjoint
    ts = tr.check_grid(P.T, P.corners, 201)
    lead = P(ts)[:, :l]
    dev = float(np.max(np.abs(lead - mult.theta[None, :])))
    if dev > tol:
        raise TransformError(
            f"leading adjoint components deviate from the weights by {dev:.3e} "
            f"(tolerance {tol:.1e})")
    return MultiplierSet.make(mult.theta, mult.lam, mult.mu,
                              tr.slice_path(P, range(l, l + n)))


def fix_objective_problem(prob: BolzaProblem, i: int, ref_values) -> BolzaProblem:
    """Keep objective i; require every other objective to reach its reference.

    For a terminal-only problem the dropped objectives become inequality
    constraints g0_k(x(T)) - ref_values[k] >= 0, appended after the original
    block.  ref_values is indexed like the objectives (entry i is ignored);
    passing the candidate's own objective values makes the new constraints
    active there.
    """
    if not prob.is_mayer():
        raise TransformError("objective fixing applies to terminal-only problems")
    if not 0 <= i < prob.l:
        raise TransformError(f"objective index {i} out of range for l={prob.l}")
    if prob.l == 1:
        return prob
    ref = np.asarray(ref_values, dtype=float).reshape(prob.l)
    extra = tuple(
        ScalarField(ex.sub(g.expr, ex.num(float(ref[j]))), prob.n, prob.k,
                    prob.params, terminal=True)
        for j, g in enumerate(prob.terminal) if j != i)
    return BolzaProblem(
        name=f"{prob.name}-objective{i}",
        T=prob.T, n=prob.n, k=prob.k, control_set=prob.control_set,
        xi0=prob.xi0, dynamics=prob.dynamics,
        running=(prob.running[i],), terminal=(prob.terminal[i],),
        ineq=tuple(prob.ineq) + extra, eq=prob.eq, omega=prob.omega,
        params=prob.params)
