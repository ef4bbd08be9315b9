import math

import numpy as np
import pytest

from paroc import trajectory as tr


def absolute_value_path():
    # x(t) = |t - 1| on [0, 2], corner at 1
    return tr.PiecewiseC1Path.from_segments(
        [lambda t: (1.0 - t,), lambda t: (t - 1.0,)], T=2.0, corners=[1.0],
        dfns=[lambda t: (-1.0,), lambda t: (1.0,)])


def test_extended_derivative_of_absolute_value():
    x = absolute_value_path()
    dx = x.extended_derivative()
    assert dx(0.0)[0] == -1.0
    assert dx(0.5)[0] == -1.0
    assert dx(1.0)[0] == 1.0          # right derivative at the corner
    assert dx(2.0)[0] == 1.0          # left derivative at T
    left, right = tr.one_sided_limits(dx, 1.0)
    assert left[0] == -1.0 and right[0] == 1.0
    # endpoints have only one side
    assert dx.one_sided_limits(0.0)[0] is None
    assert dx.one_sided_limits(2.0)[1] is None


def test_normalized_evaluation_is_right_continuous():
    p = tr.NormalizedPiecewiseC0Path.from_segments(
        [lambda t: (0.0,), lambda t: (1.0,)], T=1.0, corners=[0.5])
    assert p(0.5)[0] == 1.0
    assert p.left_value(0.5)[0] == 0.0
    assert p(1.0)[0] == 1.0  # value at T equals the left limit


def test_integrate_piecewise_and_smooth():
    x = absolute_value_path()
    val = tr.integrate(x, 0.0, 2.0)
    assert val[0] == pytest.approx(1.0, abs=1e-12)

    s = tr.NormalizedPiecewiseC0Path.from_callable(lambda t: (math.sin(t),), T=2.0)
    assert tr.integrate(s, 0.0, 2.0)[0] == pytest.approx(1.0 - math.cos(2.0), abs=1e-10)

    with pytest.raises(tr.TrajectoryError):
        tr.integrate(s, 1.5, 0.5)


def test_integrate_is_additive_across_interior_points():
    rng = np.random.default_rng(11)
    p = tr.NormalizedPiecewiseC0Path.from_segments(
        [lambda t: (math.exp(t), math.sin(3 * t)),
         lambda t: (1.0 + t, t * t)], T=1.5, corners=[0.7])
    for _ in range(10):
        c = float(rng.uniform(0.05, 1.45))
        whole = tr.integrate(p, 0.0, 1.5)
        split = tr.integrate(p, 0.0, c) + tr.integrate(p, c, 1.5)
        assert np.max(np.abs(whole - split)) < 2e-10


def test_spliced_derivative_is_continuous():
    # sin t followed by its tangent line at 1: derivative continuous, cos(1)
    x = tr.PiecewiseC1Path.from_segments(
        [lambda t: (math.sin(t),),
         lambda t: (math.sin(1.0) + math.cos(1.0) * (t - 1.0),)],
        T=2.0, corners=[1.0],
        dfns=[lambda t: (math.cos(t),), lambda t: (math.cos(1.0),)])
    dx = x.extended_derivative()
    left, right = dx.one_sided_limits(1.0)
    assert left[0] == pytest.approx(right[0], abs=1e-12)
    assert dx(1.0)[0] == pytest.approx(0.5403023058681398, abs=1e-12)


def test_corner_merge_and_validation():
    merged = tr.merge_corners([0.5, 0.5 + 1e-15, 0.25], 1.0)
    assert merged.tolist() == [0.25, 0.5]
    # corners at the boundary are absorbed
    assert tr.merge_corners([0.0, 1.0], 1.0).size == 0
    with pytest.raises(tr.TrajectoryError):
        tr.merge_corners([1.5], 1.0)
    with pytest.raises(tr.TrajectoryError):
        tr.PiecewiseC1Path.from_segments(
            [lambda t: (0.0,), lambda t: (1.0,)], T=1.0, corners=[0.5])  # jump


def test_reconstruct_round_trip_polynomials():
    rng = np.random.default_rng(0)
    for _ in range(8):
        n_corners = int(rng.integers(0, 4))
        corners = np.sort(rng.uniform(0.2, 1.8, size=n_corners))
        corners = tr.merge_corners(corners, 2.0)
        breaks = np.concatenate(([0.0], corners, [2.0]))
        coeffs = [rng.uniform(-1, 1, size=4) for _ in breaks[:-1]]

        # continuous antiderivatives of random cubics, stitched at corners
        fns, dfns, offsets = [], [], []
        val = rng.uniform(-1, 1)
        for c, a in zip(coeffs, breaks[:-1]):
            poly = np.polynomial.Polynomial(c)
            anti = poly.integ()
            off = val - anti(a)
            fns.append(lambda t, anti=anti, off=off: (anti(t) + off,))
            dfns.append(lambda t, poly=poly: (poly(t),))
            offsets.append(off)
            b = breaks[list(breaks[:-1]).index(a) + 1]
            val = anti(b) + off
        x = tr.PiecewiseC1Path.from_segments(fns, T=2.0, corners=corners, dfns=dfns)
        back = tr.reconstruct(x.extended_derivative(), x(0.0))
        ts = np.linspace(0, 2.0, 777)
        err = np.max(np.abs(back(ts) - x(ts)))
        assert err < 1e-9


def test_reconstruct_vector_valued_with_trig():
    x = tr.PiecewiseC1Path.from_callable(
        lambda t: (math.sin(2 * t), math.exp(-t)), T=1.0,
        dfn=lambda t: (2 * math.cos(2 * t), -math.exp(-t)))
    back = tr.reconstruct(x.extended_derivative(), x(0.0))
    ts = np.linspace(0, 1, 500)
    assert np.max(np.abs(back(ts) - x(ts))) < 1e-9


def test_sampled_path_and_interpolations():
    ts = np.linspace(0, 1, 101)
    ys = np.sin(ts)
    p = tr.NormalizedPiecewiseC0Path.from_samples(ts, ys)
    q = np.linspace(0, 1, 333)
    assert np.max(np.abs(p(q)[:, 0] - np.sin(q))) < 1e-7

    # zero-order hold keeps previous value and its left limit at jumps
    zp = tr.NormalizedPiecewiseC0Path.from_samples(
        [0.0, 0.5, 1.0], [0.0, 2.0, 2.0], interpolation="previous")
    assert zp(0.49)[0] == 0.0
    assert zp(0.5)[0] == 2.0


def test_json_round_trip_with_corner_duplicates():
    p = tr.NormalizedPiecewiseC0Path.from_segments(
        [lambda t: (t,), lambda t: (5.0 + t,)], T=1.0, corners=[0.5])
    obj = tr.path_to_json(p, samples_per_segment=50)
    dup = [s["t"] for s in obj["samples"]]
    assert dup.count(0.5) == 2
    i = dup.index(0.5)
    assert obj["samples"][i]["value"][0] == pytest.approx(0.5)       # left
    assert obj["samples"][i + 1]["value"][0] == pytest.approx(5.5)   # right
    back = tr.path_from_json(obj)
    ts = np.linspace(0, 1, 200)
    assert np.max(np.abs(back(ts) - p(ts))) < 1e-8
    assert back(0.5)[0] == pytest.approx(5.5, abs=1e-9)


def test_stack_and_slice_paths():
    a = tr.PiecewiseC1Path.from_callable(
        lambda t: (t,), T=1.0, dfn=lambda t: (1.0,))
    b = tr.PiecewiseC1Path.from_segments(
        [lambda t: (1.0 - t, 0.0), lambda t: (1.0 - t, t - 0.25)],
        T=1.0, corners=[0.25],
        dfns=[lambda t: (-1.0, 0.0), lambda t: (-1.0, 1.0)])
    s = tr.stack_paths([a, b])
    assert s.dim == 3
    assert s.corners.tolist() == [0.25]
    v = s(0.5)
    assert v == pytest.approx([0.5, 0.5, 0.25])
    proj = tr.slice_path(s, [2])
    assert proj(0.5)[0] == pytest.approx(0.25)
    dproj = proj.extended_derivative()
    assert dproj(0.5)[0] == pytest.approx(1.0)


def test_check_grid_includes_corners():
    g = tr.check_grid(1.0, [0.3141], n=101)
    assert 0.3141 in g
    assert g[0] == 0.0 and g[-1] == 1.0


def test_quintic_hermite_matches_smooth_function():
    ts = np.linspace(0, 1, 21)
    ys = np.exp(ts)[:, None]
    dys = np.exp(ts)[:, None]
    d2 = np.exp(ts)[:, None]
    poly = tr.quintic_hermite_poly(ts, ys, dys, d2[:-1], d2[1:])
    q = np.linspace(0, 1, 500)
    assert np.max(np.abs(poly(q)[:, 0] - np.exp(q))) < 1e-10
    dpoly = poly.derivative()
    assert np.max(np.abs(dpoly(q)[:, 0] - np.exp(q))) < 2e-8
