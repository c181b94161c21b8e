"""Continuous piecewise-linear paths and exact supremum queries.

A norm is convex, and a path is affine on each segment, so every supremum of a
convex function of the path over a segment sits at the segment endpoints. All
queries below reduce to finite candidate sets and are exact for the stored
path (up to floating-point rounding of the candidates themselves).

The ``batch_*`` functions work on an ensemble of paths that share one knot
vector, stored as ``values`` of shape ``(M, K, d)``. The methods of
:class:`PiecewiseLinearPath` are the ``M = 1`` case.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DimensionMismatch, InvalidParameter, OutOfDomain

# Pair evaluations per block in batch_modulus (bounds peak memory).
_PAIR_BLOCK = 1 << 22


@dataclass(frozen=True)
class TimeGrid:
    """Partition ``0 = t_0 < t_1 < ... < t_n = T``."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 1 or pts.size < 2:
            raise InvalidParameter("a time grid needs at least two points")
        if not np.all(np.diff(pts) > 0):
            raise InvalidParameter("grid points must be strictly increasing")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @classmethod
    def uniform(cls, horizon: float, n: int) -> "TimeGrid":
        """``t_k = (k * T) / n``; the last point is pinned to ``T``."""
        n = int(n)
        if n < 1:
            raise InvalidParameter(f"step count must be >= 1, got {n}")
        if not horizon > 0:
            raise InvalidParameter(f"horizon must be positive, got {horizon}")
        pts = np.arange(n + 1, dtype=np.float64) * float(horizon) / n
        pts[-1] = horizon
        return cls(pts)

    @property
    def n(self) -> int:
        return self.points.size - 1

    @property
    def horizon(self) -> float:
        return float(self.points[-1])

    def steps(self) -> np.ndarray:
        return np.diff(self.points)

    def mesh(self) -> float:
        return float(np.max(np.diff(self.points)))


def _as_values(values, n_knots):
    vals = np.asarray(values, dtype=np.float64)
    if vals.ndim == 1:
        vals = vals.reshape(-1, 1)
    if vals.ndim != 2 or vals.shape[0] != n_knots:
        raise DimensionMismatch(
            f"expected {n_knots} values of shape (d,), got array of shape {np.shape(values)}"
        )
    return vals


def locate(knots: np.ndarray, times) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Segment index and the two interpolation weights for each time.

    Weights follow ``(t_{i+1} - t)/(t_{i+1} - t_i)`` and ``(t - t_i)/(t_{i+1} - t_i)``
    so that both are exactly 0 or 1 at the knots. A single-knot path gets
    index 0 and weights ``(1, 0)``.
    """
    times = np.asarray(times, dtype=np.float64)
    if knots.size == 1:
        zero = np.zeros(times.shape, dtype=np.intp)
        return zero, np.ones(times.shape), np.zeros(times.shape)
    idx = np.searchsorted(knots, times, side="right") - 1
    idx = np.clip(idx, 0, knots.size - 2)
    left = knots[idx]
    right = knots[idx + 1]
    span = right - left
    return idx, (right - times) / span, (times - left) / span


def interpolate(knots: np.ndarray, values: np.ndarray, times) -> np.ndarray:
    """Evaluate an ensemble ``values[..., K, d]`` at ``times`` (no domain check)."""
    idx, w0, w1 = locate(knots, times)
    if knots.size == 1:
        return np.take(values, idx, axis=-2)
    lo = np.take(values, idx, axis=-2)
    hi = np.take(values, idx + 1, axis=-2)
    return w0[..., None] * lo + w1[..., None] * hi


def _check_interval(knots, interval):
    u1, u2 = (float(u) for u in interval)
    if u1 > u2:
        raise InvalidParameter(f"empty interval [{u1}, {u2}]")
    if u1 < knots[0] or u2 > knots[-1]:
        raise OutOfDomain(f"interval [{u1}, {u2}] not inside [{knots[0]}, {knots[-1]}]")
    return u1, u2


def interval_points(knots: np.ndarray, u1: float, u2: float) -> np.ndarray:
    """``{u1, u2}`` together with the knots strictly between them."""
    inner = knots[(knots > u1) & (knots < u2)]
    if u1 == u2:
        return np.array([u1])
    return np.concatenate(([u1], inner, [u2]))


def batch_sup_shifted_norm_sq(knots, values, a: float, interval) -> np.ndarray:
    """``sup_{s in [u1,u2]} (a + |x(s)|^2)`` for each path of the ensemble."""
    u1, u2 = _check_interval(knots, interval)
    pts = interval_points(knots, u1, u2)
    vals = interpolate(knots, values, pts)
    return a + np.max(np.sum(vals * vals, axis=-1), axis=-1)


def _modulus_candidates(knots, h, u1, u2):
    base = interval_points(knots, u1, u2)
    plus = base + h
    minus = base - h
    shifted = np.concatenate((plus[plus <= u2], minus[minus >= u1]))
    cand, inverse = np.unique(np.concatenate((base, shifted)), return_inverse=True)
    nb = base.size
    base_idx = inverse[:nb]
    shifted_idx = inverse[nb:]
    # Pairs created by the shift, kept even if rounding puts them a hair past h.
    origin = np.concatenate((np.flatnonzero(plus <= u2), np.flatnonzero(minus >= u1)))
    explicit_i = base_idx[origin]
    explicit_j = shifted_idx
    # All candidate pairs i < j with cand[j] - cand[i] <= h.
    upper = np.searchsorted(cand, cand + h, side="right")
    counts = upper - np.arange(cand.size) - 1
    counts = np.maximum(counts, 0)
    first = np.repeat(np.arange(cand.size), counts)
    offsets = np.arange(first.size) - np.repeat(np.cumsum(counts) - counts, counts)
    second = first + 1 + offsets
    pi = np.concatenate((first, explicit_i))
    pj = np.concatenate((second, explicit_j))
    return cand, pi, pj


def batch_modulus(knots, values, h: float, interval) -> np.ndarray:
    """``sup {|x(u) - x(v)| : u, v in [u1,u2], |u - v| <= h}`` per path.

    The supremum of a convex function over ``segment x segment`` intersected
    with the band ``|u - v| <= h`` is attained at a vertex of that polygon; the
    vertices are knot pairs and pairs ``(knot, knot +- h)``. Cost is
    O(K^2) in the worst case (``h`` comparable to the interval length).
    """
    if not h > 0:
        raise InvalidParameter(f"modulus window must be positive, got {h}")
    u1, u2 = _check_interval(knots, interval)
    values = np.asarray(values)
    batch_shape = values.shape[:-2]
    if u1 == u2:
        return np.zeros(batch_shape)
    cand, pi, pj = _modulus_candidates(knots, float(h), u1, u2)
    vals = interpolate(knots, values, cand)
    best = np.zeros(batch_shape)
    block = max(1, _PAIR_BLOCK // max(1, int(np.prod(batch_shape, dtype=np.int64)) * values.shape[-1]))
    for start in range(0, pi.size, block):
        a = np.take(vals, pi[start:start + block], axis=-2)
        b = np.take(vals, pj[start:start + block], axis=-2)
        diff = a - b
        dist = np.sqrt(np.sum(diff * diff, axis=-1))
        best = np.maximum(best, np.max(dist, axis=-1))
    return best


def batch_sup_norm_diff(knots1, values1, knots2, values2, interval) -> np.ndarray:
    """``sup_s |x1(s) - x2(s)|`` over the interval, evaluated on the union of knots."""
    u1, u2 = _check_interval(knots1, interval)
    _check_interval(knots2, interval)
    if np.shape(values1)[-1] != np.shape(values2)[-1]:
        raise DimensionMismatch("paths have different state dimensions")
    pts = np.union1d(interval_points(knots1, u1, u2), interval_points(knots2, u1, u2))
    diff = interpolate(knots1, values1, pts) - interpolate(knots2, values2, pts)
    return np.max(np.sqrt(np.sum(diff * diff, axis=-1)), axis=-1)


class PiecewiseLinearPath:
    """Continuous path through ``(knots[i], values[i])``, affine in between.

    Immutable after construction. Knots must be strictly increasing; there is
    no merging of near-duplicate knots.
    """

    __slots__ = ("knots", "values")

    def __init__(self, knots, values):
        knots = np.array(knots, dtype=np.float64).reshape(-1)
        if knots.size < 1:
            raise InvalidParameter("a path needs at least one knot")
        if not np.all(np.isfinite(knots)):
            raise InvalidParameter("knots must be finite")
        if knots.size > 1 and not np.all(np.diff(knots) > 0):
            raise InvalidParameter("knots must be strictly increasing")
        vals = np.array(_as_values(values, knots.size))
        knots.setflags(write=False)
        vals.setflags(write=False)
        object.__setattr__(self, "knots", knots)
        object.__setattr__(self, "values", vals)

    def __setattr__(self, name, value):
        raise AttributeError("PiecewiseLinearPath is immutable")

    @classmethod
    def constant(cls, value, start: float, end: float) -> "PiecewiseLinearPath":
        value = np.atleast_1d(np.asarray(value, dtype=np.float64))
        if start == end:
            return cls([start], [value])
        return cls([start, end], [value, value])

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    @property
    def domain(self) -> tuple[float, float]:
        return float(self.knots[0]), float(self.knots[-1])

    def __len__(self):
        return self.knots.size

    def __repr__(self):
        return f"PiecewiseLinearPath(knots={self.knots.size}, dim={self.dim}, domain={self.domain})"

    def __eq__(self, other):
        if not isinstance(other, PiecewiseLinearPath):
            return NotImplemented
        return np.array_equal(self.knots, other.knots) and np.array_equal(self.values, other.values)

    __hash__ = None

    def __call__(self, t):
        return self.eval(t)

    def eval(self, t) -> np.ndarray:
        """Value at ``t`` (shape ``(d,)``), or at each entry of an array of times."""
        t_arr = np.asarray(t, dtype=np.float64)
        if np.any(t_arr < self.knots[0]) or np.any(t_arr > self.knots[-1]) or np.any(np.isnan(t_arr)):
            raise OutOfDomain(f"time {t} outside path domain {self.domain}")
        return interpolate(self.knots, self.values, t_arr)

    def restrict(self, start: float, end: float) -> "PiecewiseLinearPath":
        """The same path on ``[start, end]``, with knots inserted at the ends."""
        start, end = _check_interval(self.knots, (start, end))
        pts = interval_points(self.knots, start, end)
        vals = interpolate(self.knots, self.values, pts)
        # Keep stored knot values bit-exact.
        hit = np.isin(pts, self.knots)
        if hit.any():
            vals[hit] = self.values[np.searchsorted(self.knots, pts[hit])]
        return PiecewiseLinearPath(pts, vals)

    def sup_shifted_norm_sq(self, a: float, interval=None) -> float:
        interval = self.domain if interval is None else interval
        return float(batch_sup_shifted_norm_sq(self.knots, self.values, a, interval))

    def modulus(self, h: float, interval=None) -> float:
        interval = self.domain if interval is None else interval
        return float(batch_modulus(self.knots, self.values, h, interval))

    def to_csv(self, target=None) -> str:
        """CSV with header ``t,x_1,...,x_d`` and 17 significant digits."""
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["t"] + [f"x_{j + 1}" for j in range(self.dim)])
        for t, row in zip(self.knots, self.values):
            writer.writerow([format(t, ".17g")] + [format(v, ".17g") for v in row])
        text = buf.getvalue()
        if target is not None:
            Path(target).write_text(text)
        return text

    @classmethod
    def from_csv(cls, source) -> "PiecewiseLinearPath":
        """Parse CSV from a file object, a ``Path``, or the CSV text itself."""
        if hasattr(source, "read"):
            text = source.read()
        elif isinstance(source, Path):
            text = source.read_text()
        else:
            text = str(source)
        rows = list(csv.reader(io.StringIO(text)))
        header, body = rows[0], [r for r in rows[1:] if r]
        if not header or header[0] != "t":
            raise InvalidParameter("path CSV must start with a 't' column")
        data = np.array([[float(v) for v in r] for r in body])
        return cls(data[:, 0], data[:, 1:])


def sup_norm_diff(p1: PiecewiseLinearPath, p2: PiecewiseLinearPath, interval=None) -> float:
    """``sup_s |p1(s) - p2(s)|``; defaults to the common domain."""
    if p1.dim != p2.dim:
        raise DimensionMismatch(f"dimensions differ: {p1.dim} vs {p2.dim}")
    if interval is None:
        interval = (max(p1.domain[0], p2.domain[0]), min(p1.domain[1], p2.domain[1]))
    return float(batch_sup_norm_diff(p1.knots, p1.values, p2.knots, p2.values, interval))
