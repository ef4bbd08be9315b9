import math

import numpy as np
import pytest

from paroc import trajectory as tr
from paroc.pontryagin import (MultiplierSet, check_conditions,
                              integrate_adjoint, terminal_adjoint)
from paroc.problem import (BolzaProblem, ControlSet, Process, check_admissible,
                           evaluate_objectives, integrate_state)
from paroc.registry import get_problem
from paroc.transform import (AugmentedProblem, TransformError, bolza_to_mayer,
                             fix_objective_problem, lift_process,
                             project_multipliers)


def random_control(rng, prob, lo=-1.0, hi=1.0):
    n_pieces = rng.integers(1, 4)
    corners = np.sort(rng.uniform(0.1, 0.9, n_pieces - 1)) * prob.T
    cs = prob.control_set
    if cs.kind == "box":
        vals = rng.uniform(cs.lower, cs.upper, (n_pieces, cs.dim))
    else:
        vals = rng.uniform(lo, hi, (n_pieces, cs.dim))
    fns = [(lambda t, v=v: tuple(v)) for v in vals]
    return tr.NormalizedPiecewiseC0Path.from_segments(
        fns, T=prob.T, corners=corners, dim=cs.dim)


def test_bolza_to_mayer_construction():
    prob = get_problem("lq1d")
    aug = bolza_to_mayer(prob)
    assert isinstance(aug, AugmentedProblem)
    assert aug.mayer.n == 3 and aug.mayer.k == 1
    assert aug.mayer.xi0 == pytest.approx([0.0, 0.0, 1.0])
    assert aug.mayer.is_mayer()
    # dynamics rows are the running integrands followed by the source field
    X = [5.0, 6.0, 2.0]
    u = [0.5]
    f = aug.mayer.dynamics(0.0, X, u)
    assert f == pytest.approx([-(2.0 ** 2), -(0.5 ** 2), 0.5])
    # terminal objectives read off the accumulators (source has no payoff)
    vals = aug.mayer.terminal_values(X)
    assert vals == pytest.approx([5.0, 6.0])


def test_bolza_to_mayer_zero_integrand_fixed_point():
    prob = BolzaProblem.build(
        name="mayer-src", T=1.0, n=1, k=1, control_set=ControlSet.free(1),
        xi0=[0.0], dynamics=["u[0]"], running=["0"], terminal=["-((x[0]-1)^2)"])
    aug = bolza_to_mayer(prob)
    X = [3.0, 0.25]
    assert aug.mayer.dynamics(0.0, X, [0.7]) == pytest.approx([0.0, 0.7])
    assert aug.mayer.terminal_values(X)[0] == pytest.approx(3.0 - 0.5625)


def test_lift_sigma_values():
    prob0 = BolzaProblem.build(
        name="zero", T=1.0, n=1, k=1, control_set=ControlSet.free(1),
        xi0=[0.0], dynamics=["u[0]"], running=["0"], terminal=["x[0]"])
    control = tr.NormalizedPiecewiseC0Path.constant([0.2], 1.0)
    proc = integrate_state(prob0, control)
    lifted = lift_process(prob0, proc)
    assert abs(lifted.state(0.7)[0]) < 1e-12

    prob1 = BolzaProblem.build(
        name="unit-rate", T=2.0, n=1, k=1, control_set=ControlSet.free(1),
        xi0=[0.0], dynamics=["u[0]"], running=["1"], terminal=["x[0]"])
    proc = integrate_state(prob1, tr.NormalizedPiecewiseC0Path.constant([0.0], 2.0))
    lifted = lift_process(prob1, proc)
    assert lifted.state(2.0)[0] == pytest.approx(2.0, abs=1e-10)

    decay = BolzaProblem.build(
        name="decay", T=1.0, n=1, k=1, control_set=ControlSet.free(1),
        xi0=[1.0], dynamics=["-x[0]"], running=["-(x[0]^2)"], terminal=["0"])
    proc = integrate_state(decay, tr.NormalizedPiecewiseC0Path.constant([0.0], 1.0))
    lifted = lift_process(decay, proc)
    want = -(1.0 - math.exp(-2.0)) / 2.0
    assert lifted.state(1.0)[0] == pytest.approx(want, abs=1e-9)


def test_lift_rejects_inadmissible():
    prob = get_problem("lq1d")
    bad_state = tr.PiecewiseC1Path.from_callable(
        lambda t: (2.0 + t,), T=1.0, dfn=lambda t: (1.0,))
    control = tr.NormalizedPiecewiseC0Path.constant([0.0], 1.0)
    with pytest.raises(TransformError):
        lift_process(prob, Process(state=bad_state, control=control))


def test_objective_equivalence_random_processes():
    rng = np.random.default_rng(42)
    cases = [("lq1d", -1.0, 1.0), ("lq1d-free", -1.0, 1.0),
             ("lq2obj-terminal", 0.05, 1.0), ("bilinear-box", -1.0, 1.0)]
    for name, lo, hi in cases:
        prob = get_problem(name)
        aug = bolza_to_mayer(prob)
        for _ in range(20):
            control = random_control(rng, prob, lo, hi)
            proc = integrate_state(prob, control)
            J = evaluate_objectives(prob, proc)
            lifted = lift_process(prob, proc)
            G = aug.mayer.terminal_values(lifted.state(prob.T))
            assert np.all(np.abs(J - G) <= 1e-8 * (1.0 + np.abs(J))), (name, J, G)


def test_admissibility_equivalence():
    rng = np.random.default_rng(7)
    prob = get_problem("lq1d")
    aug = bolza_to_mayer(prob)
    control = random_control(rng, prob)
    proc = integrate_state(prob, control)
    lifted = lift_process(prob, proc)
    rep = check_admissible(aug.mayer, lifted)
    assert rep.admissible, rep.to_json()
    # dropping the accumulators recovers a process admissible for the source
    dropped = Process(state=tr.slice_path(lifted.state, [prob.l]),
                      control=lifted.control)
    rep2 = check_admissible(prob, dropped)
    assert rep2.admissible


def test_project_multipliers_trivial_and_drift():
    prob = get_problem("lq1d")
    aug = bolza_to_mayer(prob)
    theta = np.array([0.8, 0.6])
    const = tr.PiecewiseC1Path.from_callable(
        lambda t: (0.8, 0.6, 0.0), T=1.0, dfn=lambda t: (0.0, 0.0, 0.0))
    mult = MultiplierSet.make(theta, [], [], const)
    proj = project_multipliers(aug, mult)
    assert proj.adjoint.dim == 1
    assert abs(proj.adjoint(0.5)[0]) == 0.0
    assert proj.theta == pytest.approx(theta)

    drifting = tr.PiecewiseC1Path.from_callable(
        lambda t: (0.8 + 1e-3 * t, 0.6, 0.0), T=1.0,
        dfn=lambda t: (1e-3, 0.0, 0.0))
    with pytest.raises(TransformError):
        project_multipliers(aug, MultiplierSet.make(theta, [], [], drifting))


def test_projected_adjoint_matches_direct_integration():
    prob = get_problem("lq1d")
    aug = bolza_to_mayer(prob)
    state = tr.PiecewiseC1Path.from_callable(
        lambda t: (1.0 - t,), T=1.0, dfn=lambda t: (-1.0,))
    control = tr.NormalizedPiecewiseC0Path.constant([-1.0], 1.0)
    proc = Process(state=state, control=control)
    theta = [1.0, 0.0]

    p_direct = integrate_adjoint(
        prob, proc, terminal_adjoint(prob, state(1.0), theta), theta)

    lifted = lift_process(prob, proc)
    XT = lifted.state(1.0)
    PT = terminal_adjoint(aug.mayer, XT, theta)
    assert PT == pytest.approx([1.0, 0.0, 0.0])
    P = integrate_adjoint(aug.mayer, lifted, PT, theta)
    proj = project_multipliers(aug, MultiplierSet.make(theta, [], [], P))

    ts = np.linspace(0, 1, 101)
    assert np.max(np.abs(proj.adjoint(ts) - p_direct(ts))) < 1e-6
    assert np.max(np.abs(proj.adjoint(ts)[:, 0] + (1 - ts) ** 2)) < 1e-9


def test_condition_residuals_agree_through_augmentation():
    # a deliberately non-extremal candidate: residual gap stays within 10x tol
    prob = get_problem("lq2obj-terminal")
    s = 1.0 / math.sqrt(2.0)
    state = tr.PiecewiseC1Path.from_callable(
        lambda t: (0.4 * t,), T=1.0, dfn=lambda t: (0.4,))
    control = tr.NormalizedPiecewiseC0Path.constant([0.4], 1.0)
    proc = Process(state=state, control=control)
    xT = state(1.0)
    theta, lam = np.array([s, s]), np.array([0.0])

    p = integrate_adjoint(prob, proc, terminal_adjoint(prob, xT, theta, lam), theta)
    direct = check_conditions(prob, proc, MultiplierSet.make(theta, lam, [], p))

    aug = bolza_to_mayer(prob)
    lifted = lift_process(prob, proc)
    PT = terminal_adjoint(aug.mayer, lifted.state(1.0), theta, lam)
    P = integrate_adjoint(aug.mayer, lifted, PT, theta)
    via_aug = check_conditions(aug.mayer, lifted,
                               MultiplierSet.make(theta, lam, [], P))

    assert direct["hamiltonian_maximum"].residual > 1e-3  # non-extremal indeed
    for r in direct.results:
        gap = abs(r.residual - via_aug[r.name].residual)
        assert gap <= 10.0 * r.tol, (r.name, r.residual,
                                     via_aug[r.name].residual)

    proj = project_multipliers(aug, MultiplierSet.make(theta, lam, [], P))
    back = check_conditions(prob, proc, proj)
    for r in direct.results:
        assert abs(r.residual - back[r.name].residual) <= 10.0 * r.tol


def test_fix_objective_problem():
    prob = BolzaProblem.build(
        name="m2", T=1.0, n=1, k=1, control_set=ControlSet.free(1),
        xi0=[0.0], dynamics=["u[0]"], running=["0", "0"],
        terminal=["-((x[0]-1)^2)", "-(x[0]^2)"])
    fixed = fix_objective_problem(prob, 0, [0.0, 5.0])
    assert fixed.l == 1 and fixed.m == 1
    # new constraint is g2 - 5 at the terminal point
    assert fixed.ineq_values([2.0])[0] == pytest.approx(-4.0 - 5.0)

    # active exactly at the reference values
    ref = prob.terminal_values([0.3])
    fixed2 = fix_objective_problem(prob, 1, ref)
    assert fixed2.ineq_values([0.3])[0] == pytest.approx(0.0, abs=1e-15)

    single = BolzaProblem.build(
        name="m1", T=1.0, n=1, k=1, control_set=ControlSet.free(1),
        xi0=[0.0], dynamics=["u[0]"], running=["0"], terminal=["x[0]"])
    assert fix_objective_problem(single, 0, [1.0]) is single

    with pytest.raises(TransformError):
        fix_objective_problem(prob, 2, [0.0, 0.0])
    bolza = get_problem("lq1d")
    with pytest.raises(TransformError):
        fix_objective_problem(bolza, 0, [0.0, 0.0])
