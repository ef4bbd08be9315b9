"""Piecewise trajectory classes on a fixed horizon [0, T].

A path holds a merged, sorted tuple of interior corner times and one segment
per corner interval.  Evaluation is right-continuous on [0, T) and the value
at T is the last segment's value, which matches the normalization that makes
piecewise-continuous candidates well defined pointwise.  The extended
derivative of a piecewise-C1 path is the segmentwise derivative, taking the
right derivative at corners and 0, and the left derivative at T.

Segments are stored as vectorized callables ``fn(ts) -> (len(ts), dim)`` over
a declared family: analytic closures, piecewise polynomials, or sampled data
under cubic/linear/zero-order-hold interpolation.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.interpolate import BPoly, CubicSpline

__all__ = [
    "TrajectoryError", "merge_corners", "NormalizedPiecewiseC0Path",
    "PiecewiseC1Path", "extended_derivative", "integrate", "reconstruct",
    "one_sided_limits", "stack_paths", "slice_path", "path_to_json",
    "path_from_json", "check_grid",
]

CORNER_MERGE_REL = 1e-12     # corners closer than this (times T) are merged
CONTINUITY_TOL = 1e-8        # junction mismatch allowed for piecewise-C1 paths
QUAD_TOL = 1e-10             # quadrature tolerance, relative per unit length
NODES_PER_SEGMENT = 200      # default sampling density for derived segments


class TrajectoryError(ValueError):
    pass


def merge_corners(corners: Sequence[float], T: float) -> np.ndarray:
    """Sorted interior corners with near-duplicates (within 1e-12*T) merged."""
    if T <= 0:
        raise TrajectoryError(f"horizon must be positive, got {T}")
    cs = np.sort(np.asarray(list(corners), dtype=float))
    tol = CORNER_MERGE_REL * T
    out: list[float] = []
    for c in cs:
        if c <= tol or c >= T - tol:
            if c < -tol or c > T + tol:
                raise TrajectoryError(f"corner {c} outside (0, {T})")
            continue  # merged into an endpoint
        if out and c - out[-1] <= tol:
            continue
        out.append(float(c))
    return np.asarray(out)


@dataclass(frozen=True)
class _Segment:
    a: float
    b: float
    fn: Callable[[np.ndarray], np.ndarray]
    dfn: Callable[[np.ndarray], np.ndarray] | None = None
    # piecewise-linear/hold interpolants have slope kinks at their sample
    # nodes, so integrators should read rates at interval midpoints
    prefer_midpoint_rate: bool = False


def _vectorize(fn: Callable, dim: int) -> Callable:
    def wrapped(ts: np.ndarray) -> np.ndarray:
        out = np.empty((len(ts), dim))
        for i, t in enumerate(ts):
            out[i] = np.asarray(fn(float(t)), dtype=float).reshape(dim)
        return out
    return wrapped


def _probe_dim(fn: Callable, t: float) -> int:
    v = np.asarray(fn(float(t)), dtype=float)
    return int(v.size)


class _PiecewiseBase:
    def __init__(self, T: float, corners: Sequence[float], segments: Sequence[_Segment],
                 dim: int):
        self.T = float(T)
        self.corners = merge_corners(corners, T) if not isinstance(corners, np.ndarray) \
            else corners
        self.segments = tuple(segments)
        self.dim = int(dim)
        if len(self.segments) != len(self.corners) + 1:
            raise TrajectoryError(
                f"{len(self.corners)} corners require {len(self.corners)+1} segments, "
                f"got {len(self.segments)}")
        self.breaks = np.concatenate(([0.0], self.corners, [self.T]))

    # -- evaluation -------------------------------------------------------

    def _segment_index(self, ts: np.ndarray) -> np.ndarray:
        idx = np.searchsorted(self.breaks, ts, side="right") - 1
        return np.clip(idx, 0, len(self.segments) - 1)

    def __call__(self, ts) -> np.ndarray:
        scalar = np.isscalar(ts) or np.asarray(ts).ndim == 0
        ts = np.atleast_1d(np.asarray(ts, dtype=float))
        if ts.size and (ts.min() < -1e-12 or ts.max() > self.T + 1e-12):
            raise TrajectoryError(f"time outside [0, {self.T}]")
        ts = np.clip(ts, 0.0, self.T)
        out = np.empty((len(ts), self.dim))
        idx = self._segment_index(ts)
        for i in np.unique(idx):
            mask = idx == i
            out[mask] = self.segments[i].fn(ts[mask])
        return out[0] if scalar else out

    def value(self, t: float) -> np.ndarray:
        return self(t)

    def segment_value(self, i: int, ts) -> np.ndarray:
        """Evaluate segment i's own limit at ts (one-sided at its endpoints)."""
        scalar = np.isscalar(ts) or np.asarray(ts).ndim == 0
        ts = np.atleast_1d(np.asarray(ts, dtype=float))
        out = self.segments[i].fn(ts)
        return out[0] if scalar else out

    def left_value(self, t: float) -> np.ndarray | None:
        if t <= 0.0:
            return None
        i = int(np.searchsorted(self.breaks, t, side="left")) - 1
        i = min(max(i, 0), len(self.segments) - 1)
        return self.segment_value(i, t)

    def right_value(self, t: float) -> np.ndarray | None:
        if t >= self.T:
            return None
        i = int(np.searchsorted(self.breaks, t, side="right")) - 1
        i = min(max(i, 0), len(self.segments) - 1)
        return self.segment_value(i, t)

    def one_sided_limits(self, t: float):
        return self.left_value(t), self.right_value(t)

    # -- serialization ----------------------------------------------------

    def to_json(self, samples_per_segment: int = NODES_PER_SEGMENT) -> dict:
        return path_to_json(self, samples_per_segment)


class NormalizedPiecewiseC0Path(_PiecewiseBase):
    """Right-continuous piecewise-continuous path; value at T is the left limit."""

    @classmethod
    def from_segments(cls, fns: Sequence[Callable], T: float, corners=(),
                      dim: int | None = None, vectorized: bool = False,
                      dfns: Sequence[Callable] | None = None):
        corners = merge_corners(corners, T)
        breaks = np.concatenate(([0.0], corners, [T]))
        if len(fns) != len(breaks) - 1:
            raise TrajectoryError(f"need {len(breaks)-1} segment callables, got {len(fns)}")
        if dim is None:
            dim = _probe_dim(fns[0], breaks[0])
        segs = []
        for i, fn in enumerate(fns):
            f = fn if vectorized else _vectorize(fn, dim)
            df = None
            if dfns is not None and dfns[i] is not None:
                df = dfns[i] if vectorized else _vectorize(dfns[i], dim)
            segs.append(_Segment(breaks[i], breaks[i + 1], f, df))
        return cls(T, corners, segs, dim)

    @classmethod
    def from_callable(cls, fn: Callable, T: float, corners=(), dim: int | None = None,
                      vectorized: bool = False, dfn: Callable | None = None):
        corners = merge_corners(corners, T)
        n_seg = len(corners) + 1
        return cls.from_segments([fn] * n_seg, T, corners, dim, vectorized,
                                 None if dfn is None else [dfn] * n_seg)

    @classmethod
    def from_samples(cls, ts, values, T: float | None = None, corners=(),
                     interpolation: str = "cubic"):
        return _path_from_samples(cls, ts, values, T, corners, interpolation)

    @classmethod
    def constant(cls, value, T: float):
        v = np.atleast_1d(np.asarray(value, dtype=float))
        dim = v.size
        return cls.from_callable(lambda ts: np.tile(v, (len(ts), 1)), T,
                                 vectorized=True, dim=dim,
                                 dfn=lambda ts: np.zeros((len(ts), dim)))


class PiecewiseC1Path(_PiecewiseBase):
    """Continuous path with C1 segments; junction values must agree."""

    def __init__(self, T, corners, segments, dim):
        super().__init__(T, corners, segments, dim)
        for i, c in enumerate(self.corners):
            lv = self.segments[i].fn(np.array([c]))[0]
            rv = self.segments[i + 1].fn(np.array([c]))[0]
            gap = float(np.max(np.abs(lv - rv)))
            if gap > CONTINUITY_TOL * (1.0 + float(np.max(np.abs(lv)))):
                raise TrajectoryError(f"discontinuity {gap:.3e} at corner {c}")

    from_segments = classmethod(NormalizedPiecewiseC0Path.from_segments.__func__)
    from_callable = classmethod(NormalizedPiecewiseC0Path.from_callable.__func__)
    constant = classmethod(NormalizedPiecewiseC0Path.constant.__func__)

    @classmethod
    def from_samples(cls, ts, values, T: float | None = None, corners=(),
                     interpolation: str = "cubic"):
        return _path_from_samples(cls, ts, values, T, corners, interpolation)

    def extended_derivative(self) -> NormalizedPiecewiseC0Path:
        return extended_derivative(self)

    def initial_value(self) -> np.ndarray:
        return self(0.0)


# ---------------------------------------------------------------------------
# sampled segments

def _spline_segment(a: float, b: float, ts: np.ndarray, ys: np.ndarray,
                    interpolation: str) -> _Segment:
    if interpolation == "previous":
        def fn(qs, ts=ts, ys=ys):
            idx = np.clip(np.searchsorted(ts, qs, side="right") - 1, 0, len(ts) - 1)
            return ys[idx]
        def dfn(qs, d=ys.shape[1]):
            return np.zeros((len(qs), d))
        return _Segment(a, b, fn, dfn, prefer_midpoint_rate=True)
    if interpolation == "linear" or len(ts) < 4:
        def fn(qs, ts=ts, ys=ys):
            out = np.empty((len(qs), ys.shape[1]))
            for j in range(ys.shape[1]):
                out[:, j] = np.interp(qs, ts, ys[:, j])
            return out
        slopes = np.diff(ys, axis=0) / np.diff(ts)[:, None] if len(ts) > 1 \
            else np.zeros((1, ys.shape[1]))
        def dfn(qs, ts=ts, slopes=slopes):
            idx = np.clip(np.searchsorted(ts, qs, side="right") - 1, 0, len(slopes) - 1)
            return slopes[idx]
        return _Segment(a, b, fn, dfn, prefer_midpoint_rate=True)
    if interpolation != "cubic":
        raise TrajectoryError(f"unknown interpolation {interpolation!r}")
    spl = CubicSpline(ts, ys, axis=0)
    der = spl.derivative()
    return _Segment(a, b, lambda qs: np.atleast_2d(spl(qs)), lambda qs: np.atleast_2d(der(qs)))


def _path_from_samples(cls, ts, values, T, corners, interpolation):
    ts = np.asarray(ts, dtype=float)
    ys = np.asarray(values, dtype=float)
    if ys.ndim == 1:
        ys = ys[:, None]
    if T is None:
        T = float(ts[-1])
    corners = merge_corners(corners, T)
    breaks = np.concatenate(([0.0], corners, [T]))
    # assign samples to segments; a duplicated time at a corner splits
    # left-then-right
    seg_of = np.zeros(len(ts), dtype=int)
    s = 0
    for i in range(1, len(ts)):
        if ts[i] < ts[i - 1]:
            raise TrajectoryError("sample times must be nondecreasing")
        if ts[i] == ts[i - 1]:
            s += 1
            if s >= len(breaks) - 1 or abs(ts[i] - breaks[s]) > CORNER_MERGE_REL * T:
                raise TrajectoryError(f"duplicate sample time {ts[i]} is not a corner")
        else:
            # a single sample exactly at a corner stays with the left segment;
            # only a duplicate or a later time advances
            while s + 1 < len(breaks) - 1 and ts[i] > breaks[s + 1]:
                s += 1
        seg_of[i] = s
    segs = []
    for i in range(len(breaks) - 1):
        mask = seg_of == i
        if not np.any(mask):
            raise TrajectoryError(f"no samples in segment [{breaks[i]}, {breaks[i+1]}]")
        sts, sys = ts[mask], ys[mask]
        if len(sts) == 1:
            v = sys[0]
            segs.append(_Segment(breaks[i], breaks[i + 1],
                                 lambda qs, v=v: np.tile(v, (len(qs), 1)),
                                 lambda qs, d=len(v): np.zeros((len(qs), d))))
        else:
            segs.append(_spline_segment(breaks[i], breaks[i + 1], sts, sys, interpolation))
    return cls(T, corners, segs, ys.shape[1])


def _segment_with_derivative(seg: _Segment, dim: int) -> _Segment:
    if seg.dfn is not None:
        return seg
    # sampled fallback: fit a cubic to the callable and differentiate it
    ts = np.linspace(seg.a, seg.b, NODES_PER_SEGMENT + 1)
    spl = CubicSpline(ts, seg.fn(ts), axis=0)
    der = spl.derivative()
    return _Segment(seg.a, seg.b, seg.fn, lambda qs: np.atleast_2d(der(qs)))


# ---------------------------------------------------------------------------
# module operations

def extended_derivative(path: PiecewiseC1Path) -> NormalizedPiecewiseC0Path:
    """Segmentwise derivative; right limits at corners and 0, left limit at T."""
    segs = []
    for seg in path.segments:
        s = _segment_with_derivative(seg, path.dim)
        segs.append(_Segment(s.a, s.b, s.dfn, None))
    return NormalizedPiecewiseC0Path(path.T, path.corners, segs, path.dim)


def _simpson(fn: Callable, a: float, b: float, n_panels: int) -> np.ndarray:
    ts = np.linspace(a, b, 2 * n_panels + 1)
    ys = fn(ts)
    h = (b - a) / n_panels
    return (h / 6.0) * (ys[0] + ys[-1] + 4.0 * ys[1::2].sum(axis=0)
                        + 2.0 * ys[2:-1:2].sum(axis=0))


def integrate(path: NormalizedPiecewiseC0Path, a: float, b: float,
              quad_tol: float = QUAD_TOL) -> np.ndarray:
    """Componentwise integral over [a, b] by composite Simpson quadrature.

    Quadrature panels never straddle corners; each corner-free piece is
    refined until the Richardson difference meets quad_tol (relative, per
    unit length).
    """
    if b < a:
        raise TrajectoryError(f"reversed integration bounds [{a}, {b}]")
    if a < -1e-12 or b > path.T + 1e-12:
        raise TrajectoryError(f"integration bounds outside [0, {path.T}]")
    if a == b:
        return np.zeros(path.dim)
    cuts = [a] + [float(c) for c in path.corners if a < c < b] + [b]
    total = np.zeros(path.dim)
    for lo, hi in zip(cuts[:-1], cuts[1:]):
        i = int(np.searchsorted(path.breaks, 0.5 * (lo + hi), side="right")) - 1
        i = min(max(i, 0), len(path.segments) - 1)
        fn = path.segments[i].fn
        n = 8
        prev = _simpson(fn, lo, hi, n)
        while True:
            n *= 2
            cur = _simpson(fn, lo, hi, n)
            err = float(np.max(np.abs(cur - prev)))
            if err <= quad_tol * (hi - lo) * (1.0 + float(np.max(np.abs(cur)))) \
                    or n >= 2 ** 14:
                break
            prev = cur
        total += cur
    return total


def cubic_hermite_poly(ts: np.ndarray, ys: np.ndarray, dys: np.ndarray) -> BPoly:
    """Piecewise cubic matching values and first derivatives at the nodes."""
    h = np.diff(ts)[:, None]
    c = np.empty((4, len(ts) - 1) + ys.shape[1:])
    c[0] = ys[:-1]
    c[1] = ys[:-1] + h * dys[:-1] / 3.0
    c[2] = ys[1:] - h * dys[1:] / 3.0
    c[3] = ys[1:]
    return BPoly(c, ts)


def quintic_hermite_poly(ts: np.ndarray, ys: np.ndarray, dys: np.ndarray,
                         d2l: np.ndarray, d2r: np.ndarray) -> BPoly:
    """Piecewise quintic matching values, first derivatives, and one-sided
    second derivatives per interval (d2l at the left node, d2r at the right)."""
    h = np.diff(ts)[:, None]
    c = np.empty((6, len(ts) - 1) + ys.shape[1:])
    c[0] = ys[:-1]
    c[1] = ys[:-1] + h * dys[:-1] / 5.0
    c[2] = ys[:-1] + 2.0 * h * dys[:-1] / 5.0 + h * h * d2l / 20.0
    c[3] = ys[1:] - 2.0 * h * dys[1:] / 5.0 + h * h * d2r / 20.0
    c[4] = ys[1:] - h * dys[1:] / 5.0
    c[5] = ys[1:]
    return BPoly(c, ts)


def _poly_segment(a: float, b: float, poly: BPoly, dpoly: BPoly | None = None,
                  dfn: Callable | None = None) -> _Segment:
    dp = dpoly if dpoly is not None else poly.derivative()
    fn = lambda qs: np.atleast_2d(poly(np.clip(qs, a, b)))
    d = dfn if dfn is not None else (lambda qs: np.atleast_2d(dp(np.clip(qs, a, b))))
    return _Segment(a, b, fn, d)


def path_from_polys(cls, polys: Sequence[BPoly], T: float, corners, dim: int,
                    dfns: Sequence[Callable] | None = None):
    corners = merge_corners(corners, T)
    breaks = np.concatenate(([0.0], corners, [T]))
    segs = [_poly_segment(breaks[i], breaks[i + 1], p, None,
                          None if dfns is None else dfns[i])
            for i, p in enumerate(polys)]
    return cls(T, corners, segs, dim)


def reconstruct(derivative: NormalizedPiecewiseC0Path, x0,
                nodes_per_segment: int = NODES_PER_SEGMENT) -> PiecewiseC1Path:
    """Antiderivative path: x(t) = x0 + integral of the extended derivative.

    Node values accumulate per-panel Simpson sums; between nodes the segment
    is the cubic Hermite interpolant of (value, derivative) pairs, so the
    returned path's extended derivative is the input restricted to segments.
    """
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    if x0.size != derivative.dim:
        raise TrajectoryError(f"x0 has dim {x0.size}, expected {derivative.dim}")
    polys = []
    dfns = []
    start = x0.copy()
    for seg in derivative.segments:
        n = nodes_per_segment
        ts = np.linspace(seg.a, seg.b, n + 1)
        mids = 0.5 * (ts[:-1] + ts[1:])
        f_nodes = seg.fn(ts)
        f_mids = seg.fn(mids)
        h = (seg.b - seg.a) / n
        panel = (h / 6.0) * (f_nodes[:-1] + 4.0 * f_mids + f_nodes[1:])
        F = np.vstack([start, start + np.cumsum(panel, axis=0)])
        polys.append(cubic_hermite_poly(ts, F, f_nodes))
        dfns.append(lambda qs, fn=seg.fn: fn(qs))
        start = F[-1]
    return path_from_polys(PiecewiseC1Path, polys, derivative.T, derivative.corners,
                           derivative.dim, dfns)


def one_sided_limits(path: _PiecewiseBase, t: float):
    """(left limit, right limit) at t; None outside the half-open sides."""
    return path.one_sided_limits(t)


def stack_paths(paths: Sequence[_PiecewiseBase], cls=None):
    """Concatenate component blocks of several paths on a merged corner set."""
    T = paths[0].T
    for p in paths:
        if abs(p.T - T) > 1e-12 * max(T, 1.0):
            raise TrajectoryError("paths have different horizons")
    corners = merge_corners(np.concatenate([p.corners for p in paths]), T)
    breaks = np.concatenate(([0.0], corners, [T]))
    dim = sum(p.dim for p in paths)
    if cls is None:
        cls = PiecewiseC1Path if all(isinstance(p, PiecewiseC1Path) for p in paths) \
            else NormalizedPiecewiseC0Path
    segs = []
    for i in range(len(breaks) - 1):
        a, b = breaks[i], breaks[i + 1]
        mid = 0.5 * (a + b)
        idxs = [int(np.clip(np.searchsorted(p.breaks, mid, side="right") - 1, 0,
                            len(p.segments) - 1)) for p in paths]
        def fn(qs, idxs=idxs):
            return np.hstack([p.segments[j].fn(qs) for p, j in zip(paths, idxs)])
        have_d = all(p.segments[j].dfn is not None for p, j in zip(paths, idxs))
        dfn = None
        if have_d:
            def dfn(qs, idxs=idxs):
                return np.hstack([p.segments[j].dfn(qs) for p, j in zip(paths, idxs)])
        segs.append(_Segment(a, b, fn, dfn))
    return cls(T, corners, segs, dim)


def slice_path(path: _PiecewiseBase, indices):
    """Path of a subset of components (e.g. projecting an augmented state)."""
    indices = list(indices)
    segs = []
    for seg in path.segments:
        fn = lambda qs, f=seg.fn: f(qs)[:, indices]
        dfn = None if seg.dfn is None else (lambda qs, d=seg.dfn: d(qs)[:, indices])
        segs.append(_Segment(seg.a, seg.b, fn, dfn))
    cls = type(path)
    return cls(path.T, path.corners, segs, len(indices))


def check_grid(T: float, corners, n: int = 1001) -> np.ndarray:
    """Uniform n-point grid on [0, T] merged with the corner times."""
    ts = np.union1d(np.linspace(0.0, T, n), np.asarray(corners, dtype=float))
    return ts


# ---------------------------------------------------------------------------
# JSON round trip

def path_to_json(path: _PiecewiseBase, samples_per_segment: int = NODES_PER_SEGMENT,
                 interpolation: str = "cubic") -> dict:
    """Serialize by sampling; corner times appear twice, left then right."""
    samples = []
    for i, seg in enumerate(path.segments):
        ts = np.linspace(seg.a, seg.b, samples_per_segment + 1)
        ys = seg.fn(ts)
        lo = 0 if i == 0 else 1
        if i > 0:  # right limit at the corner opening this segment
            samples.append({"t": float(seg.a), "value": [float(v) for v in ys[0]]})
        for t, y in zip(ts[lo:], ys[lo:]):
            samples.append({"t": float(t), "value": [float(v) for v in y]})
    return {
        "dim": path.dim,
        "T": path.T,
        "corners": [float(c) for c in path.corners],
        "interpolation": interpolation,
        "samples": samples,
    }


def path_from_json(obj: dict, cls=None):
    if cls is None:
        cls = NormalizedPiecewiseC0Path
    try:
        ts = [s["t"] for s in obj["samples"]]
        ys = [s["value"] for s in obj["samples"]]
        corners = obj.get("corners", [])
        T = obj.get("T", ts[-1] if ts else None)
        interpolation = obj.get("interpolation", "cubic")
    except (KeyError, TypeError) as err:
        raise TrajectoryError(f"malformed path object: {err}") from None
    return cls.from_samples(ts, ys, T=T, corners=corners, interpolation=interpolation)


def dumps(path: _PiecewiseBase, **kw) -> str:
    return json.dumps(path_to_json(path, **kw), sort_keys=True)
