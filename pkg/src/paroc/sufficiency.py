"""Concavity-based optimality certificates.

Pointwise concavity tests (falsification by seeded sampling) plus three
Hamiltonian conditions that upgrade a first-order candidate into a weak
Pareto or Pareto certificate: a direct inequality against sampled
admissible comparison processes, concavity of the pointwise-maximized
Hamiltonian in the state, and joint concavity of the Hamiltonian in state
and control.  A "holds" verdict certifies only that no violation was found
among the samples; failures carry a counterexample that re-evaluates to a
violation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import trajectory as tr
from .pontryagin import (CheckConfig, ConditionReport, MultiplierSet,
                         check_conditions, hamiltonian_bolza,
                         maximize_hamiltonian)
from .problem import BolzaProblem, Process, check_admissible, integrate_state

__all__ = [
    "CONC_TOL", "HAM_TOL", "SufficiencyError", "SufficiencyConfig",
    "ConcavityVerdict", "HamiltonianInequalityReport", "SufficiencyReport",
    "test_concave_at", "test_pseudo_concave_at", "test_quasi_concave_at",
    "sample_comparison_processes", "check_hamiltonian_inequality",
    "check_maximized_hamiltonian_concavity",
    "check_joint_hamiltonian_concavity", "certify",
]

CONC_TOL = 1e-8
HAM_TOL = 1e-6

# odd sixteenths: interior mixing weights, symmetric, none equal to 0 or 1
_MIXES = np.arange(1, 16, 2) / 16.0

_STRATEGIES = ("joint-concavity", "maximized-hamiltonian",
               "hamiltonian-inequality")


class SufficiencyError(RuntimeError):
    pass


@dataclass(frozen=True)
class SufficiencyConfig:
    directions: int = 256
    time_samples: int = 11
    sample_radius: float = 1.0
    conc_tol: float = CONC_TOL
    ham_tol: float = HAM_TOL
    n_comparisons: int = 20
    comparison_scale: float = 0.5
    grid: int = 201
    seed: int = 0
    check: CheckConfig = field(default_factory=CheckConfig)


@dataclass(frozen=True)
class ConcavityVerdict:
    kind: str
    holds_on_samples: bool
    counterexample: dict | None
    samples_used: int

    @property
    def holds(self) -> bool:
        return self.holds_on_samples

    def to_json(self) -> dict:
        out = {"kind": self.kind, "holds_on_samples": self.holds_on_samples,
               "samples_used": self.samples_used}
        if self.counterexample is not None:
            out["counterexample"] = dict(self.counterexample)
        return out


@dataclass(frozen=True)
class HamiltonianInequalityReport:
    residual: float
    tol: float
    holds: bool
    time: float | None
    comparison: int | None
    n_comparisons: int

    def to_json(self) -> dict:
        return {"residual": self.residual, "tol": self.tol,
                "holds": self.holds, "time": self.time,
                "comparison": self.comparison,
                "n_comparisons": self.n_comparisons}


def _sample_box(domain, xbar, radius):
    lo = np.broadcast_to(np.asarray(domain[0], dtype=float), xbar.shape).copy()
    hi = np.broadcast_to(np.asarray(domain[1], dtype=float), xbar.shape).copy()
    if np.any(lo > hi):
        raise SufficiencyError("empty sampling domain")
    if np.any(xbar < lo - 1e-9) or np.any(xbar > hi + 1e-9):
        raise SufficiencyError("reference point outside the domain")
    lo[~np.isfinite(lo)] = (xbar - radius)[~np.isfinite(lo)]
    hi[~np.isfinite(hi)] = (xbar + radius)[~np.isfinite(hi)]
    return lo, hi


def test_concave_at(fn, xbar, domain, samples: int = 256,
                    conc_tol: float = CONC_TOL, seed: int = 0,
                    sample_radius: float = 1.0) -> ConcavityVerdict:
    """No sampled chord may cross above the function.

    Draws `samples` points y in the domain (unbounded sides clipped to
    xbar +- sample_radius) and checks the chord inequality at interior
    mixing weights.
    """
    xbar = np.atleast_1d(np.asarray(xbar, dtype=float))
    lo, hi = _sample_box(domain, xbar, sample_radius)
    rng = np.random.default_rng(seed)
    ys = rng.uniform(lo, hi, (samples, xbar.size))
    f0 = float(fn(xbar))
    worst, ce = -math.inf, None
    for y in ys:
        fy = float(fn(y))
        for t in _MIXES:
            viol = (1.0 - t) * f0 + t * fy - float(fn((1.0 - t) * xbar + t * y))
            if viol > worst:
                worst, ce = viol, {"y": [float(v) for v in y],
                                   "t_mix": float(t), "violation": viol}
    holds = bool(worst <= conc_tol)
    return ConcavityVerdict("concave_at", holds, None if holds else ce,
                            samples * len(_MIXES))


def test_pseudo_concave_at(fn, xbar, domain, samples: int = 256,
                           conc_tol: float = CONC_TOL, seed: int = 0,
                           sample_radius: float = 1.0,
                           grad=None) -> ConcavityVerdict:
    """Sampled points on the nonincreasing side of the tangent must not
    exceed the value at the reference point."""
    xbar = np.atleast_1d(np.asarray(xbar, dtype=float))
    lo, hi = _sample_box(domain, xbar, sample_radius)
    if grad is None:
        h = 1e-6
        grad = np.empty(xbar.size)
        for j in range(xbar.size):
            e = np.zeros(xbar.size)
            e[j] = h
            grad[j] = (float(fn(xbar + e)) - float(fn(xbar - e))) / (2 * h)
    grad = np.asarray(grad, dtype=float)
    rng = np.random.default_rng(seed)
    ys = rng.uniform(lo, hi, (samples, xbar.size))
    f0 = float(fn(xbar))
    worst, ce = -math.inf, None
    for y in ys:
        if float(grad @ (y - xbar)) > 0.0:
            continue
        viol = float(fn(y)) - f0
        if viol > worst:
            worst, ce = viol, {"y": [float(v) for v in y], "t_mix": None,
                               "violation": viol}
    holds = bool(worst <= conc_tol)
    return ConcavityVerdict("pseudo_concave_at", holds,
                            None if holds else ce, samples)


def test_quasi_concave_at(fn, xbar, domain, samples: int = 256,
                          conc_tol: float = CONC_TOL, seed: int = 0,
                          sample_radius: float = 1.0) -> ConcavityVerdict:
    """Whenever a sampled point is at least as good, every mix toward it
    must stay at least as good as the reference point."""
    xbar = np.atleast_1d(np.asarray(xbar, dtype=float))
    lo, hi = _sample_box(domain, xbar, sample_radius)
    rng = np.random.default_rng(seed)
    ys = rng.uniform(lo, hi, (samples, xbar.size))
    f0 = float(fn(xbar))
    worst, ce = -math.inf, None
    for y in ys:
        if f0 > float(fn(y)):
            continue
        for t in _MIXES:
            viol = f0 - float(fn((1.0 - t) * xbar + t * y))
            if viol > worst:
                worst, ce = viol, {"y": [float(v) for v in y],
                                   "t_mix": float(t), "violation": viol}
    holds = bool(worst <= conc_tol)
    return ConcavityVerdict("quasi_concave_at", holds, None if holds else ce,
                            samples * len(_MIXES))


# keep pytest from collecting these exported checkers as test cases
test_concave_at.__test__ = False
test_pseudo_concave_at.__test__ = False
test_quasi_concave_at.__test__ = False


# ---------------------------------------------------------------------------
# Hamiltonian conditions


def _state_domain(prob: BolzaProblem):
    if prob.omega is not None:
        return prob.omega
    return (np.full(prob.n, -np.inf), np.full(prob.n, np.inf))


def _control_domain(prob: BolzaProblem):
    cs = prob.control_set
    if cs.kind == "box":
        return (cs.lower, cs.upper)
    return (np.full(prob.k, -np.inf), np.full(prob.k, np.inf))


def _interior_times(T: float, corners, n: int) -> np.ndarray:
    """Sampling times that avoid every corner: per-piece midpoint grids."""
    edges = np.concatenate(([0.0], np.asarray(corners, dtype=float), [T]))
    out = []
    for a, b in zip(edges[:-1], edges[1:]):
        cnt = max(2, int(round(n * (b - a) / T)))
        out.append(a + (b - a) * (np.arange(cnt) + 0.5) / cnt)
    return np.concatenate(out)


def _ham_grid(prob, ts, xs, us, ps, theta):
    vals = np.einsum("si,si->s", np.asarray(ps),
                     prob.dynamics.value_batch(ts, xs, us))
    for th, f in zip(theta, prob.running):
        if th != 0.0:
            vals = vals + th * f.value_batch(ts, xs, us)
    return vals


def sample_comparison_processes(prob: BolzaProblem, cand: Process,
                                count: int = 20, scale: float = 0.5,
                                seed: int = 0) -> list:
    """Random admissible processes near the candidate: piecewise-constant
    control offsets, projected into the control set, state re-integrated.
    Inadmissible draws are discarded."""
    rng = np.random.default_rng(seed)
    cs = prob.control_set
    base = cand.control

    def shifted(ts, d):
        vals = base(ts) + d
        if cs.kind == "box":
            return np.clip(vals, cs.lower, cs.upper)
        if cs.kind == "finite":
            return np.stack([cs.project(v) for v in vals])
        return vals

    out = []
    tries = 0
    while len(out) < count and tries < 10 * count:
        tries += 1
        pieces = int(rng.integers(1, 5))
        corners = np.sort(rng.uniform(0.05, 0.95, pieces - 1)) * prob.T
        deltas = rng.uniform(-scale, scale, (pieces, prob.k))
        fns = [(lambda ts, d=deltas[j]: shifted(ts, d)) for j in range(pieces)]
        control = tr.NormalizedPiecewiseC0Path.from_segments(
            fns, prob.T, corners, dim=prob.k, vectorized=True)
        proc = integrate_state(prob, control)
        if check_admissible(prob, proc).admissible:
            out.append(proc)
    return out


def check_hamiltonian_inequality(prob: BolzaProblem, cand: Process,
                                 mult: MultiplierSet, comparisons,
                                 cfg: SufficiencyConfig | None = None
                                 ) -> HamiltonianInequalityReport:
    """The candidate's Hamiltonian advantage over each comparison process
    must dominate the adjoint-rate pairing with the state gap, at every
    non-corner sampling time."""
    cfg = cfg or SufficiencyConfig()
    theta = np.atleast_1d(np.asarray(mult.theta, dtype=float))
    p = mult.adjoint
    dp = p.extended_derivative()
    worst, where = -math.inf, (None, None)
    for idx, comp in enumerate(comparisons):
        corners = tr.merge_corners(
            np.concatenate([cand.corners(), comp.corners(), p.corners]),
            prob.T)
        ts = _interior_times(prob.T, corners, cfg.grid)
        xbar, ubar = cand.state(ts), cand.control(ts)
        x, u = comp.state(ts), comp.control(ts)
        pv, dpv = p(ts), dp(ts)
        gain = (_ham_grid(prob, ts, xbar, ubar, pv, theta)
                - _ham_grid(prob, ts, x, u, pv, theta))
        pairing = np.einsum("si,si->s", dpv, x - xbar)
        viol = pairing - gain
        i = int(np.argmax(viol))
        if viol[i] > worst:
            worst, where = float(viol[i]), (float(ts[i]), idx)
    residual = max(0.0, worst) if comparisons else 0.0
    return HamiltonianInequalityReport(
        residual=residual, tol=cfg.ham_tol, holds=residual <= cfg.ham_tol,
        time=where[0], comparison=where[1], n_comparisons=len(comparisons))


def _aggregate(kind, verdicts, times, samples):
    worst, ce = -math.inf, None
    holds = True
    for v, t in zip(verdicts, times):
        if not v.holds_on_samples:
            holds = False
            if v.counterexample["violation"] > worst:
                worst = v.counterexample["violation"]
                ce = dict(v.counterexample)
                ce["time"] = float(t)
    return ConcavityVerdict(kind, holds, ce, samples)


def check_maximized_hamiltonian_concavity(prob: BolzaProblem, cand: Process,
                                          mult: MultiplierSet,
                                          cfg: SufficiencyConfig | None = None
                                          ) -> ConcavityVerdict:
    """Concavity in the state of max over the control set of the weighted
    Hamiltonian, tested at the candidate state along a corner-free grid."""
    cfg = cfg or SufficiencyConfig()
    theta = np.atleast_1d(np.asarray(mult.theta, dtype=float))
    p = mult.adjoint
    corners = tr.merge_corners(
        np.concatenate([cand.corners(), p.corners]), prob.T)
    ts = _interior_times(prob.T, corners, cfg.time_samples)
    domain = _state_domain(prob)
    free = prob.control_set.kind == "free"
    verdicts, used = [], 0
    for ti, t in enumerate(ts):
        t = float(t)
        xbar = cand.state.value(t)
        u0 = cand.control.value(t)
        pv = p.value(t)
        ustar, val = maximize_hamiltonian(prob, t, xbar, pv, theta, u0=u0,
                                          cfg=cfg.check)
        if free:
            diverged = not (np.isfinite(val) and np.all(np.isfinite(ustar))) \
                or float(np.max(np.abs(ustar))) > 1e8
            if not diverged:
                for j in range(prob.k):
                    for sgn in (-1.0, 1.0):
                        far = np.array(ustar, dtype=float)
                        far[j] += sgn * 1e3
                        if hamiltonian_bolza(prob, t, xbar, far, pv, theta) \
                                > val + 1e-6 * (1.0 + abs(val)):
                            diverged = True
            if diverged:
                raise SufficiencyError(
                    "pointwise Hamiltonian maximization is unbounded "
                    f"over the free control set at t={t:.6g}")

        def hstar(xi, t=t, pv=pv, u0=u0):
            return maximize_hamiltonian(prob, t, xi, pv, theta, u0=u0,
                                        cfg=cfg.check)[1]

        v = test_concave_at(hstar, xbar, domain, samples=cfg.directions,
                            conc_tol=cfg.conc_tol, seed=cfg.seed + 7919 * ti,
                            sample_radius=cfg.sample_radius)
        verdicts.append(v)
        used += v.samples_used
        if not v.holds_on_samples:
            break
    return _aggregate("concave_at", verdicts, ts[:len(verdicts)], used)


def check_joint_hamiltonian_concavity(prob: BolzaProblem, cand: Process,
                                      mult: MultiplierSet,
                                      cfg: SufficiencyConfig | None = None
                                      ) -> ConcavityVerdict:
    """Joint concavity of the weighted Hamiltonian in (state, control) at
    the candidate pair, along a corner-free grid.

    Requires the control set to contain a neighborhood of the candidate
    control at every sampled time."""
    cfg = cfg or SufficiencyConfig()
    cs = prob.control_set
    if cs.kind == "finite":
        raise SufficiencyError(
            "joint concavity needs a neighborhood of the candidate control; "
            "a finite control set has none")
    theta = np.atleast_1d(np.asarray(mult.theta, dtype=float))
    p = mult.adjoint
    corners = tr.merge_corners(
        np.concatenate([cand.corners(), p.corners]), prob.T)
    ts = _interior_times(prob.T, corners, cfg.time_samples)
    slo, shi = _state_domain(prob)
    clo, chi = _control_domain(prob)
    domain = (np.concatenate([slo, clo]), np.concatenate([shi, chi]))
    n = prob.n
    verdicts, used = [], 0
    for ti, t in enumerate(ts):
        t = float(t)
        xbar = cand.state.value(t)
        ubar = cand.control.value(t)
        if cs.kind == "box" and not cs.interior_contains(ubar):
            raise SufficiencyError(
                f"candidate control is on the box boundary at t={t:.6g}")
        pv = p.value(t)

        def ham(z, t=t, pv=pv):
            return hamiltonian_bolza(prob, t, z[:n], z[n:], pv, theta)

        v = test_concave_at(ham, np.concatenate([xbar, ubar]), domain,
                            samples=cfg.directions, conc_tol=cfg.conc_tol,
                            seed=cfg.seed + 7919 * ti,
                            sample_radius=cfg.sample_radius)
        verdicts.append(v)
        used += v.samples_used
        if not v.holds_on_samples:
            break
    return _aggregate("concave_at", verdicts, ts[:len(verdicts)], used)


# ---------------------------------------------------------------------------
# full certification


@dataclass(frozen=True)
class SufficiencyReport:
    strategy: str | None
    verdict: str
    conditions_checked: dict
    multipliers: MultiplierSet
    strategies_tried: tuple

    def to_json(self) -> dict:
        conds = {}
        for k, v in self.conditions_checked.items():
            if hasattr(v, "to_json"):
                conds[k] = v.to_json()
            else:
                conds[k] = v
        return {"strategy": self.strategy, "verdict": self.verdict,
                "strategies_tried": list(self.strategies_tried),
                "conditions": conds,
                "multipliers": self.multipliers.to_json()}


def _terminal_entries(prob, xT, cfg, entries):
    domain = _state_domain(prob)
    mayer = prob.is_mayer()
    kw = dict(samples=cfg.directions, conc_tol=cfg.conc_tol,
              sample_radius=cfg.sample_radius)
    for i, g in enumerate(prob.terminal):
        fn = lambda xi, g=g: float(g(0.0, xi))
        if mayer:
            entries[f"payoff-pseudo-concave[{i}]"] = test_pseudo_concave_at(
                fn, xT, domain, seed=cfg.seed + i,
                grad=g.grad_x(0.0, xT), **kw)
        else:
            entries[f"payoff-concave[{i}]"] = test_concave_at(
                fn, xT, domain, seed=cfg.seed + i, **kw)
    for a, g in enumerate(prob.ineq):
        fn = lambda xi, g=g: float(g(0.0, xi))
        entries[f"ineq-quasi-concave[{a}]"] = test_quasi_concave_at(
            fn, xT, domain, seed=cfg.seed + 101 + a, **kw)
    for b, h in enumerate(prob.eq):
        pos = test_quasi_concave_at(lambda xi, h=h: float(h(0.0, xi)),
                                    xT, domain, seed=cfg.seed + 211 + b, **kw)
        neg = test_quasi_concave_at(lambda xi, h=h: -float(h(0.0, xi)),
                                    xT, domain, seed=cfg.seed + 307 + b, **kw)
        ce = pos.counterexample if not pos.holds_on_samples \
            else neg.counterexample
        if ce is not None and not neg.holds_on_samples and pos.holds_on_samples:
            ce = dict(ce)
            ce["sign"] = -1
        entries[f"eq-quasi-concave[{b}]"] = ConcavityVerdict(
            "quasi_concave_at",
            pos.holds_on_samples and neg.holds_on_samples, ce,
            pos.samples_used + neg.samples_used)


_BASE_CONDITIONS = ("nontriviality", "multiplier_signs",
                    "complementary_slackness", "transversality")


def certify(prob: BolzaProblem, cand: Process, mult: MultiplierSet,
            strategy: str = "auto", cfg: SufficiencyConfig | None = None,
            report: ConditionReport | None = None,
            comparisons=None) -> SufficiencyReport:
    """Terminal concavity conditions plus one Hamiltonian condition.

    strategy "auto" tries joint-concavity, then maximized-hamiltonian, then
    hamiltonian-inequality, stopping at the first that holds on samples.
    The verdict is "pareto" when every check holds and every objective
    weight is strictly positive, "weak_pareto" when the weights are merely
    nonzero, and "inconclusive" otherwise.
    """
    cfg = cfg or SufficiencyConfig()
    if strategy == "auto":
        order = _STRATEGIES
    elif strategy in _STRATEGIES:
        order = (strategy,)
    else:
        raise SufficiencyError(f"unknown strategy {strategy!r}; "
                               f"options: auto, {', '.join(_STRATEGIES)}")
    entries = {}
    smooth = (prob.dynamics.smooth
              and all(f.smooth for f in prob.running)
              and all(f.smooth for f in prob.terminal)
              and all(f.smooth for f in prob.ineq)
              and all(f.smooth for f in prob.eq))
    entries["field-smoothness"] = smooth
    prefix = "mayer" if prob.is_mayer() else "bolza"
    if not smooth:
        return SufficiencyReport(None, "inconclusive", entries, mult, ())

    xT = cand.state(cand.T)
    _terminal_entries(prob, xT, cfg, entries)
    terminal_ok = all(v.holds_on_samples for k, v in entries.items()
                      if isinstance(v, ConcavityVerdict))

    if report is None:
        report = check_conditions(prob, cand, mult, cfg.check)

    tried = []
    success = None
    for name in order:
        tried.append(f"{prefix}/{name}")
        if name == "hamiltonian-inequality":
            missing = [c for c in _BASE_CONDITIONS if not report[c].passed]
        else:
            missing = [r.name for r in report.results if not r.passed]
        if missing:
            entries[name] = {"skipped": "multiplier conditions not satisfied",
                             "missing": missing}
            continue
        try:
            if name == "joint-concavity":
                result = check_joint_hamiltonian_concavity(prob, cand, mult,
                                                           cfg)
            elif name == "maximized-hamiltonian":
                result = check_maximized_hamiltonian_concavity(prob, cand,
                                                               mult, cfg)
            else:
                if comparisons is None:
                    comparisons = sample_comparison_processes(
                        prob, cand, cfg.n_comparisons, cfg.comparison_scale,
                        cfg.seed)
                result = check_hamiltonian_inequality(prob, cand, mult,
                                                      comparisons, cfg)
                if result.n_comparisons == 0:
                    entries[name] = {"skipped":
                                     "no admissible comparison processes"}
                    continue
        except SufficiencyError as err:
            entries[name] = {"error": str(err)}
            continue
        entries[name] = result
        if result.holds:
            success = name
            break

    theta = np.atleast_1d(np.asarray(mult.theta, dtype=float))
    if success is not None and terminal_ok:
        if np.all(theta > 0.0):
            verdict = "pareto"
        elif float(np.linalg.norm(theta)) > 0.0:
            verdict = "weak_pareto"
        else:
            verdict = "inconclusive"
    else:
        verdict = "inconclusive"
    return SufficiencyReport(
        f"{prefix}/{success}" if success else None, verdict, entries, mult,
        tuple(tried))
