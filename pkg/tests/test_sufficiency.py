import math

import numpy as np
import pytest

from paroc import trajectory as tr
from paroc.pontryagin import CheckConfig, MultiplierSet, integrate_adjoint, \
    terminal_adjoint
from paroc.problem import BolzaProblem, ControlSet, Process
from paroc.registry import get_problem
from paroc.sufficiency import (ConcavityVerdict, SufficiencyConfig,
                               SufficiencyError, certify,
                               check_hamiltonian_inequality,
                               check_joint_hamiltonian_concavity,
                               check_maximized_hamiltonian_concavity,
                               sample_comparison_processes, test_concave_at,
                               test_pseudo_concave_at, test_quasi_concave_at)

FREE = (np.array([-np.inf]), np.array([np.inf]))
UNIT = (np.array([-1.0]), np.array([1.0]))


def small_cfg(**kw):
    base = dict(directions=24, time_samples=5, grid=41, n_comparisons=10,
                check=CheckConfig(time_grid=201, control_grid=41,
                                  adjoint_steps=200))
    base.update(kw)
    return SufficiencyConfig(**base)


def lq1d_extremal():
    prob = get_problem("lq1d")
    state = tr.PiecewiseC1Path.from_callable(
        lambda t: (1.0 - t,), T=1.0, dfn=lambda t: (-1.0,))
    control = tr.NormalizedPiecewiseC0Path.constant([-1.0], 1.0)
    adj = tr.PiecewiseC1Path.from_callable(
        lambda t: (-(1.0 - t) ** 2,), T=1.0, dfn=lambda t: (2.0 * (1.0 - t),))
    mult = MultiplierSet.make([1.0, 0.0], [], [], adj)
    return prob, Process(state=state, control=control), mult


def test_concave_at_quadratic_and_cubic():
    neg = test_concave_at(lambda x: -float(x @ x), [0.3, -0.2],
                          (np.full(2, -np.inf), np.full(2, np.inf)),
                          samples=128, seed=1)
    assert neg.holds_on_samples and neg.counterexample is None
    assert neg.samples_used == 128 * 8

    cubic = test_concave_at(lambda x: float(x[0]) ** 3, [0.0], UNIT,
                            samples=128, seed=1)
    assert not cubic.holds_on_samples
    ce = cubic.counterexample
    y, t = np.array(ce["y"]), ce["t_mix"]
    redo = (1 - t) * 0.0 + t * y[0] ** 3 - (t * y[0]) ** 3
    assert redo == pytest.approx(ce["violation"])
    assert ce["violation"] >= 1e-8

    lin = test_concave_at(lambda x: 3.0 * float(x[0]) - 1.0, [0.2], UNIT,
                          samples=64, seed=0)
    assert lin.holds_on_samples


def test_pseudo_concave_at_cases():
    shifted = test_pseudo_concave_at(lambda x: -(float(x[0]) - 1.0) ** 2,
                                     [0.0], UNIT, samples=128, seed=2)
    assert shifted.holds_on_samples

    cubic = test_pseudo_concave_at(lambda x: float(x[0]) ** 3, [0.0], UNIT,
                                   samples=128, seed=2, grad=np.zeros(1))
    assert not cubic.holds_on_samples
    assert cubic.counterexample["violation"] > 0
    assert cubic.counterexample["t_mix"] is None

    conc = test_pseudo_concave_at(lambda x: -float(x @ x), [0.1, 0.1],
                                  (np.full(2, -2.0), np.full(2, 2.0)),
                                  samples=128, seed=3)
    assert conc.holds_on_samples


def test_quasi_concave_at_cases():
    mono = test_quasi_concave_at(lambda x: 2.0 * float(x[0]), [0.0], UNIT,
                                 samples=64, seed=4)
    assert mono.holds_on_samples

    square = test_quasi_concave_at(lambda x: float(x[0]) ** 2, [1.0],
                                   (np.array([-2.0]), np.array([2.0])),
                                   samples=128, seed=4)
    assert not square.holds_on_samples
    ce = square.counterexample
    y, t = ce["y"][0], ce["t_mix"]
    assert y ** 2 >= 1.0  # the sampled point was at least as good
    assert 1.0 - ((1 - t) * 1.0 + t * y) ** 2 == pytest.approx(ce["violation"])

    const = test_quasi_concave_at(lambda x: 5.0, [0.0], UNIT, samples=32,
                                  seed=5)
    assert const.holds_on_samples


def test_domain_guards():
    with pytest.raises(SufficiencyError):
        test_concave_at(lambda x: 0.0, [0.0],
                        (np.array([1.0]), np.array([-1.0])))
    with pytest.raises(SufficiencyError):
        test_concave_at(lambda x: 0.0, [5.0], UNIT)


def test_hamiltonian_inequality_self_and_lq():
    prob, cand, mult = lq1d_extremal()
    cfg = small_cfg()
    self_rep = check_hamiltonian_inequality(prob, cand, mult, [cand], cfg)
    assert self_rep.residual == 0.0
    assert self_rep.holds

    comps = sample_comparison_processes(prob, cand, count=10, seed=3)
    assert len(comps) == 10
    rep = check_hamiltonian_inequality(prob, cand, mult, comps, cfg)
    assert rep.holds and rep.residual <= 1e-6

    flipped = MultiplierSet.make(mult.theta, [], [], tr.PiecewiseC1Path.from_callable(
        lambda t: ((1.0 - t) ** 2,), T=1.0, dfn=lambda t: (-2.0 * (1.0 - t),)))
    bad = check_hamiltonian_inequality(prob, cand, flipped, comps, cfg)
    assert bad.residual > 1e-2
    assert not bad.holds


def test_maximized_hamiltonian_concavity_lq_holds():
    prob, cand, mult = lq1d_extremal()
    rep = check_maximized_hamiltonian_concavity(prob, cand, mult,
                                                small_cfg(directions=16))
    assert rep.holds_on_samples
    assert rep.counterexample is None


def test_maximized_hamiltonian_concavity_bilinear_fails():
    prob = get_problem("bilinear-box")
    u = 0.3
    state = tr.PiecewiseC1Path.from_callable(
        lambda t: (math.exp(u * t),), T=1.0,
        dfn=lambda t: (u * math.exp(u * t),))
    control = tr.NormalizedPiecewiseC0Path.constant([u], 1.0)
    adj = tr.PiecewiseC1Path.from_callable(
        lambda t: (math.exp(1.0 - t),), T=1.0,
        dfn=lambda t: (-math.exp(1.0 - t),))
    mult = MultiplierSet.make([0.25, 0.75], [], [], adj)
    rep = check_maximized_hamiltonian_concavity(
        prob, Process(state=state, control=control), mult,
        small_cfg(directions=16, time_samples=3))
    assert not rep.holds_on_samples
    assert rep.counterexample["violation"] >= 1e-8
    assert "time" in rep.counterexample


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_maximized_hamiltonian_unbounded_raises():
    prob = get_problem("lq2obj-terminal")
    state = tr.PiecewiseC1Path.from_callable(
        lambda t: (t,), T=1.0, dfn=lambda t: (1.0,))
    control = tr.NormalizedPiecewiseC0Path.constant([1.0], 1.0)
    adj = tr.PiecewiseC1Path.constant([0.2], 1.0)
    mult = MultiplierSet.make([1.0, 0.0], [0.0], [], adj)
    with pytest.raises(SufficiencyError):
        check_maximized_hamiltonian_concavity(
            prob, Process(state=state, control=control), mult,
            small_cfg(time_samples=3))


def test_maximized_hamiltonian_singleton_reduction():
    prob = BolzaProblem.build(
        name="single", T=1.0, n=1, k=1,
        control_set=ControlSet.finite([[0.3]]), xi0=[1.0],
        dynamics=["u[0]"], running=["-(x[0]^2)"], terminal=["0"])
    state = tr.PiecewiseC1Path.from_callable(
        lambda t: (1.0 + 0.3 * t,), T=1.0, dfn=lambda t: (0.3,))
    control = tr.NormalizedPiecewiseC0Path.constant([0.3], 1.0)
    adj = tr.PiecewiseC1Path.constant([0.1], 1.0)
    mult = MultiplierSet.make([1.0], [], [], adj)
    rep = check_maximized_hamiltonian_concavity(
        prob, Process(state=state, control=control), mult,
        small_cfg(directions=16, time_samples=3))
    assert rep.holds_on_samples


def test_joint_concavity_free_control_holds():
    prob = get_problem("lq1d-free")
    state = tr.PiecewiseC1Path.from_callable(
        lambda t: (1.25 * math.exp(t) - 0.25,), T=1.0,
        dfn=lambda t: (1.25 * math.exp(t),))
    control = tr.NormalizedPiecewiseC0Path.constant([0.25], 1.0)
    proc = Process(state=state, control=control)
    theta = [0.5, 0.5]
    p = integrate_adjoint(prob, proc,
                          terminal_adjoint(prob, state(1.0), theta), theta,
                          n_steps=200)
    mult = MultiplierSet.make(theta, [], [], p)
    rep = check_joint_hamiltonian_concavity(prob, proc, mult,
                                            small_cfg(directions=32))
    assert rep.holds_on_samples


def test_joint_concavity_boundary_control_raises():
    prob, cand, mult = lq1d_extremal()
    with pytest.raises(SufficiencyError):
        check_joint_hamiltonian_concavity(prob, cand, mult, small_cfg())


def test_joint_concavity_saddle_fails():
    # bilinear state-control term produces a saddle at interior points
    prob = get_problem("bilinear-box")
    u = 0.3
    state = tr.PiecewiseC1Path.from_callable(
        lambda t: (math.exp(u * t),), T=1.0,
        dfn=lambda t: (u * math.exp(u * t),))
    control = tr.NormalizedPiecewiseC0Path.constant([u], 1.0)
    adj = tr.PiecewiseC1Path.constant([0.5], 1.0)
    mult = MultiplierSet.make([0.25, 0.75], [], [], adj)
    rep = check_joint_hamiltonian_concavity(
        prob, Process(state=state, control=control), mult,
        small_cfg(directions=64, time_samples=3))
    assert not rep.holds_on_samples


def lq2obj_extremal(theta, control_value):
    prob = get_problem("lq2obj-terminal")
    state = tr.PiecewiseC1Path.from_callable(
        lambda t: (control_value * t,), T=1.0,
        dfn=lambda t: (control_value,))
    control = tr.NormalizedPiecewiseC0Path.constant([control_value], 1.0)
    proc = Process(state=state, control=control)
    theta = np.asarray(theta, dtype=float)
    lam = np.array([0.0])
    p = integrate_adjoint(prob, proc,
                          terminal_adjoint(prob, state(1.0), theta, lam),
                          theta, n_steps=200)
    return prob, proc, MultiplierSet.make(theta, lam, [], p)


def test_certify_interior_weights_pareto():
    s = 1.0 / math.sqrt(2.0)
    prob, proc, mult = lq2obj_extremal([s, s], 0.5)
    rep = certify(prob, proc, mult, cfg=small_cfg())
    assert rep.verdict == "pareto"
    assert rep.strategy == "bolza/joint-concavity"
    assert rep.conditions_checked["payoff-concave[0]"].holds_on_samples
    assert rep.conditions_checked["ineq-quasi-concave[0]"].holds_on_samples
    blob = rep.to_json()
    assert blob["verdict"] == "pareto"
    assert blob["conditions"]["field-smoothness"] is True


def test_certify_boundary_weight_weak_pareto():
    prob, proc, mult = lq2obj_extremal([1.0, 0.0], 1.0)
    rep = certify(prob, proc, mult, cfg=small_cfg())
    assert rep.verdict == "weak_pareto"
    assert rep.strategy == "bolza/joint-concavity"


def test_certify_nonconcave_payoff_inconclusive():
    prob = BolzaProblem.build(
        name="cube", T=1.0, n=1, k=1, control_set=ControlSet.free(1),
        xi0=[0.0], dynamics=["u[0]"], running=["0"], terminal=["x[0]^3"])
    state = tr.PiecewiseC1Path.constant([0.0], 1.0)
    control = tr.NormalizedPiecewiseC0Path.constant([0.0], 1.0)
    proc = Process(state=state, control=control)
    p = tr.PiecewiseC1Path.constant([0.0], 1.0)
    mult = MultiplierSet.make([1.0], [], [], p)
    rep = certify(prob, proc, mult, cfg=small_cfg())
    assert rep.verdict == "inconclusive"
    key = "payoff-pseudo-concave[0]"
    assert key in rep.conditions_checked  # Mayer form uses the weaker test
    assert not rep.conditions_checked[key].holds_on_samples
    assert rep.conditions_checked[key].counterexample["violation"] > 0


def test_certify_cascade_skips_boundary_joint_test():
    # boundary control kills the joint test; the maximized form still works
    prob, cand, mult = lq1d_extremal()
    rep = certify(prob, cand, mult, cfg=small_cfg(directions=12))
    assert rep.strategy == "bolza/maximized-hamiltonian"
    assert rep.verdict == "weak_pareto"
    joint = rep.conditions_checked["joint-concavity"]
    assert "boundary" in joint["error"]
    assert rep.strategies_tried[:2] == ("bolza/joint-concavity",
                                        "bolza/maximized-hamiltonian")


def test_certify_explicit_strategy_and_bad_name():
    prob, cand, mult = lq1d_extremal()
    rep = certify(prob, cand, mult, strategy="hamiltonian-inequality",
                  cfg=small_cfg())
    assert rep.strategy == "bolza/hamiltonian-inequality"
    assert rep.verdict == "weak_pareto"
    with pytest.raises(SufficiencyError):
        certify(prob, cand, mult, strategy="nope", cfg=small_cfg())


def test_maximized_implies_inequality_on_samples():
    prob, cand, mult = lq1d_extremal()
    cfg = small_cfg(directions=16)
    assert check_maximized_hamiltonian_concavity(prob, cand, mult,
                                                 cfg).holds_on_samples
    comps = sample_comparison_processes(prob, cand, count=10, seed=11)
    rep = check_hamiltonian_inequality(prob, cand, mult, comps, cfg)
    assert rep.holds


def test_mayer_form_matches_zero_running_residuals():
    mayer = BolzaProblem.build(
        name="pure", T=1.0, n=1, k=1, control_set=ControlSet.box([-1], [1]),
        xi0=[0.5], dynamics=["u[0] - x[0]"], running=["0", "0"],
        terminal=["x[0]", "-(x[0]^2)"])
    state = tr.PiecewiseC1Path.from_callable(
        lambda t: (0.5,), T=1.0, dfn=lambda t: (0.0,))
    control = tr.NormalizedPiecewiseC0Path.constant([0.5], 1.0)
    proc = Process(state=state, control=control)
    adj = tr.PiecewiseC1Path.from_callable(
        lambda t: (0.3 * math.exp(t),), T=1.0,
        dfn=lambda t: (0.3 * math.exp(t),))
    cfg = small_cfg()
    comps = sample_comparison_processes(mayer, proc, count=8, seed=2)
    reps = []
    for theta in ([0.3, 0.7], [0.9, 0.1]):
        mult = MultiplierSet.make(theta, [], [], adj)
        reps.append(check_hamiltonian_inequality(mayer, proc, mult, comps,
                                                 cfg))
    assert reps[0].residual == pytest.approx(reps[1].residual, abs=1e-12)
    assert mayer.is_mayer()
