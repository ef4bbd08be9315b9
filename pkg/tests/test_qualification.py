import json
import math

import numpy as np
import pytest
from scipy.optimize import brentq

from paroc import trajectory as tr
from paroc.pontryagin import recover_multipliers
from paroc.problem import BolzaProblem, ControlSet, Process, integrate_state
from paroc.qualification import (QualificationError,
                                 check_constraint_control_rows,
                                 check_constraint_gradients,
                                 check_control_surjectivity,
                                 check_objective_constraint_gradients,
                                 check_objective_control_rows)
from paroc.registry import get_problem


def linear_problem(n, terminal, ineq=(), eq=()):
    dyn = ["u[0]"] + ["0"] * (n - 1)
    return BolzaProblem.build(
        name="syn", T=1.0, n=n, k=1, control_set=ControlSet.free(1),
        xi0=[0.0] * n, dynamics=dyn, running=["0"] * len(terminal),
        terminal=list(terminal), ineq=list(ineq), eq=list(eq))


def test_constraint_gradients_orthonormal_rows():
    prob = linear_problem(2, ["0"], ineq=["x[0]"], eq=["x[1]"])
    rep = check_constraint_gradients(prob, [0.0, 0.0])
    assert rep.holds
    assert rep.certificate["min_combination_norm"] == pytest.approx(1.0, abs=1e-6)


def test_constraint_gradients_opposed_fail():
    prob = linear_problem(2, ["0"], ineq=["x[0]", "-x[0]"])
    rep = check_constraint_gradients(prob, [0.0, 0.0])
    assert not rep.holds
    c = np.asarray(rep.certificate["coefficients"])
    assert c == pytest.approx([math.sqrt(0.5)] * 2, abs=1e-6)
    assert rep.combination_norm() <= rep.certificate["tol"]


def test_constraint_gradients_inactive_vacuous():
    prob = linear_problem(2, ["0"], ineq=["x[0]"])
    rep = check_constraint_gradients(prob, [0.5, 0.0])
    assert rep.holds
    assert len(rep.stack) == 0
    assert rep.certificate["min_combination_norm"] is None


def test_objective_gradients_included():
    prob = linear_problem(2, ["x[1]"], ineq=["x[0]"])
    rep = check_objective_constraint_gradients(prob, [0.0, 0.0])
    assert rep.holds

    opposed = linear_problem(2, ["-x[0]"], ineq=["x[0]"])
    rep2 = check_objective_constraint_gradients(opposed, [0.0, 0.0])
    assert not rep2.holds
    c = np.asarray(rep2.certificate["coefficients"])
    assert c == pytest.approx([math.sqrt(0.5)] * 2, abs=1e-6)
    assert rep2.combination_norm() <= rep2.certificate["tol"]
    # the smaller stack cannot fail when the bigger one holds
    assert check_constraint_gradients(opposed, [0.0, 0.0]).holds


def _random_linear_expr(rng, n):
    coeffs = rng.uniform(-2.0, 2.0, n)
    return " + ".join(f"({c:.4f})*x[{i}]" for i, c in enumerate(coeffs))


def test_objective_check_implies_constraint_check():
    rng = np.random.default_rng(3)
    hits = 0
    for _ in range(30):
        l = int(rng.integers(1, 3))
        m = int(rng.integers(0, 3))
        q = int(rng.integers(0, 2))
        prob = linear_problem(
            3, [_random_linear_expr(rng, 3) for _ in range(l)],
            ineq=[_random_linear_expr(rng, 3) for _ in range(m)],
            eq=[_random_linear_expr(rng, 3) for _ in range(q)])
        wide = check_objective_constraint_gradients(prob, [0.0, 0.0, 0.0])
        narrow = check_constraint_gradients(prob, [0.0, 0.0, 0.0])
        if wide.holds:
            hits += 1
            assert narrow.holds
    assert hits >= 5


def two_state_proc(prob, value=(0.3, 0.4)):
    return integrate_state(
        prob, tr.NormalizedPiecewiseC0Path.constant(list(value), prob.T))


def test_constraint_control_rows_cases():
    base = dict(name="p", T=1.0, n=2, k=2, control_set=ControlSet.free(2),
                xi0=[0.0, 0.0], dynamics=["u[0]", "u[1]"],
                running=["0"], terminal=["x[0]"])
    prob = BolzaProblem.build(**base, ineq=["x[0]", "x[1]"])
    rep = check_constraint_control_rows(prob, two_state_proc(prob))
    assert rep.holds
    assert rep.certificate["smallest_singular_value"] == pytest.approx(1.0)

    dup = BolzaProblem.build(**base, ineq=["x[0]", "x[0]"])
    rep2 = check_constraint_control_rows(dup, two_state_proc(dup))
    assert not rep2.holds
    c = np.asarray(rep2.certificate["coefficients"])
    assert abs(c @ np.array([1.0, -1.0]) / math.sqrt(2)) == pytest.approx(1.0, abs=1e-9)
    assert rep2.combination_norm() <= rep2.certificate["tol"]


def test_constraint_control_rows_rank_bound():
    prob = BolzaProblem.build(
        name="over", T=1.0, n=1, k=1, control_set=ControlSet.free(1),
        xi0=[0.0], dynamics=["u[0]"], running=["0"], terminal=["x[0]"],
        ineq=["x[0]"], eq=["x[0] - 0.5"])
    proc = integrate_state(prob, tr.NormalizedPiecewiseC0Path.constant([0.5], 1.0))
    rep = check_constraint_control_rows(prob, proc)
    assert not rep.holds
    assert rep.certificate["smallest_singular_value"] == 0.0
    assert rep.combination_norm() <= rep.certificate["tol"]


def test_control_rows_preconditions():
    finite = BolzaProblem.build(
        name="fin", T=1.0, n=1, k=1,
        control_set=ControlSet.finite([[0.0], [1.0]]),
        xi0=[0.0], dynamics=["u[0]"], running=["0"], terminal=["x[0]"],
        ineq=["x[0]"])
    proc = integrate_state(finite, tr.NormalizedPiecewiseC0Path.constant([0.0], 1.0))
    with pytest.raises(QualificationError):
        check_constraint_control_rows(finite, proc)

    lq = get_problem("lq1d")
    boundary = integrate_state(lq, tr.NormalizedPiecewiseC0Path.constant([1.0], 1.0))
    with pytest.raises(QualificationError):
        check_constraint_control_rows(lq, boundary)


def test_objective_control_rows():
    # single objective: the stack is just the constraint rows
    prob = BolzaProblem.build(
        name="one", T=1.0, n=2, k=2, control_set=ControlSet.free(2),
        xi0=[0.0, 0.0], dynamics=["u[0]", "u[1]"], running=["0"],
        terminal=["x[0]"], ineq=["x[0]", "x[1]"])
    proc = two_state_proc(prob)
    rep_a = check_constraint_control_rows(prob, proc)
    rep_b = check_objective_control_rows(prob, proc, 0)
    assert rep_b.index == 0
    assert rep_b.holds == rep_a.holds
    assert rep_b.certificate["smallest_singular_value"] == pytest.approx(
        rep_a.certificate["smallest_singular_value"])

    two = BolzaProblem.build(
        name="two", T=1.0, n=2, k=2, control_set=ControlSet.free(2),
        xi0=[0.0, 0.0], dynamics=["u[0]", "u[1]"], running=["0", "0"],
        terminal=["x[0]", "x[1]"])
    assert check_objective_control_rows(two, two_state_proc(two), 0).holds

    with pytest.raises(QualificationError):
        check_objective_control_rows(two, two_state_proc(two), 5)


def test_objective_control_rows_running_cancellation():
    prob = BolzaProblem.build(
        name="cancel", T=1.0, n=1, k=1, control_set=ControlSet.free(1),
        xi0=[0.0], dynamics=["u[0]"], running=["-u[0]", "0"],
        terminal=["x[0]", "0"])
    proc = integrate_state(prob, tr.NormalizedPiecewiseC0Path.constant([0.3], 1.0))
    assert check_objective_control_rows(prob, proc, 1).holds
    rep = check_objective_control_rows(prob, proc, 1, include_running=True)
    assert not rep.holds
    assert rep.certificate["include_running"] is True
    assert rep.combination_norm() <= rep.certificate["tol"]


def test_control_surjectivity():
    free = get_problem("lq1d-free")
    proc = integrate_state(free, tr.NormalizedPiecewiseC0Path.constant([0.0], 1.0))
    rep = check_control_surjectivity(free, proc)
    assert rep.holds
    assert 0.0 <= rep.certificate["witness_time"] <= 1.0
    assert rep.certificate["smallest_singular_value"] == pytest.approx(1.0)

    no_u = BolzaProblem.build(
        name="nou", T=1.0, n=1, k=1, control_set=ControlSet.free(1),
        xi0=[1.0], dynamics=["x[0]"], running=["0"], terminal=["x[0]"])
    rep2 = check_control_surjectivity(no_u, integrate_state(
        no_u, tr.NormalizedPiecewiseC0Path.constant([0.0], 1.0)))
    assert not rep2.holds
    assert rep2.certificate["smallest_singular_value"] == pytest.approx(0.0, abs=1e-12)

    thin = BolzaProblem.build(
        name="thin", T=1.0, n=2, k=1, control_set=ControlSet.free(1),
        xi0=[0.0, 0.0], dynamics=["u[0]", "x[0]"], running=["0"],
        terminal=["x[0]"])
    rep3 = check_control_surjectivity(thin, integrate_state(
        thin, tr.NormalizedPiecewiseC0Path.constant([0.0], 1.0)))
    assert not rep3.holds

    lq = get_problem("lq1d")
    boundary = integrate_state(lq, tr.NormalizedPiecewiseC0Path.constant([1.0], 1.0))
    rep4 = check_control_surjectivity(lq, boundary)
    assert not rep4.holds
    assert "interior" in rep4.certificate["note"]


def test_recovered_multipliers_never_vanish():
    prob = get_problem("lq2obj-terminal")
    state = tr.PiecewiseC1Path.from_callable(
        lambda t: (0.5 * t,), T=1.0, dfn=lambda t: (0.5,))
    control = tr.NormalizedPiecewiseC0Path.constant([0.5], 1.0)
    proc = Process(state=state, control=control)
    assert check_constraint_gradients(prob, state(1.0)).holds
    mult, report = recover_multipliers(prob, proc)
    assert report.passed
    ts = tr.check_grid(1.0, proc.corners(), 201)
    joint = np.sqrt(np.linalg.norm(mult.theta) ** 2
                    + np.sum(mult.adjoint(ts) ** 2, axis=1))
    assert float(np.min(joint)) > 1e-8


def bilinear_interior_extremal():
    """Constant-control extremal of the bilinear problem with both running
    and terminal terms active; the control stays strictly inside the box."""
    prob = get_problem("bilinear-box")
    u = brentq(lambda v: 6.0 * v - math.exp(v), 0.1, 0.5, xtol=1e-14)
    state = tr.PiecewiseC1Path.from_callable(
        lambda t, u=u: (math.exp(u * t),), T=1.0,
        dfn=lambda t, u=u: (u * math.exp(u * t),))
    control = tr.NormalizedPiecewiseC0Path.constant([u], 1.0)
    return prob, Process(state=state, control=control), u


def test_unique_recovery_with_independent_objective_rows():
    prob, proc, u = bilinear_interior_extremal()
    for j in range(2):
        assert check_objective_control_rows(
            prob, proc, j, include_running=True).holds
    mult_a, rep_a = recover_multipliers(prob, proc, seed=0)
    mult_b, rep_b = recover_multipliers(prob, proc, seed=7)
    assert rep_a.passed and rep_b.passed
    assert mult_a.theta == pytest.approx(mult_b.theta, abs=1e-6)
    want = np.array([1.0, 3.0]) / math.sqrt(10.0)
    assert mult_a.theta == pytest.approx(want, abs=1e-6)


def test_report_json_shape():
    prob = linear_problem(2, ["0"], ineq=["x[0]", "-x[0]"])
    rep = check_constraint_gradients(prob, [0.0, 0.0])
    blob = json.loads(json.dumps(rep.to_json()))
    assert blob["which"] == "active-constraint-gradients"
    assert blob["holds"] is False
    assert len(blob["certificate"]["coefficients"]) == 2

    two = BolzaProblem.build(
        name="two", T=1.0, n=2, k=2, control_set=ControlSet.free(2),
        xi0=[0.0, 0.0], dynamics=["u[0]", "u[1]"], running=["0", "0"],
        terminal=["x[0]", "x[1]"])
    rep2 = check_objective_control_rows(two, two_state_proc(two), 1)
    assert rep2.to_json()["index"] == 1
