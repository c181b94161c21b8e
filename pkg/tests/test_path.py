import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sfde.errors import DimensionMismatch, InvalidParameter, OutOfDomain
from sfde.path import PiecewiseLinearPath, TimeGrid, sup_norm_diff

# Oracles: dense sampling of every segment with its endpoints included, and a
# polygon-vertex enumeration for the modulus. Neither uses the library's
# candidate sets or interpolation helpers.


def dense_eval(knots, values, per_segment, interval):
    u1, u2 = interval
    pts = [np.array([u1, u2])]
    inner = knots[(knots > u1) & (knots < u2)]
    edges = np.concatenate(([u1], inner, [u2]))
    for a, b in zip(edges[:-1], edges[1:]):
        pts.append(np.linspace(a, b, per_segment))
    t = np.unique(np.concatenate(pts))
    cols = [np.interp(t, knots, values[:, j]) for j in range(values.shape[1])]
    return t, np.stack(cols, axis=1)


def brute_sup_shifted(path, a, interval, per_segment=2001):
    _, x = dense_eval(path.knots, path.values, per_segment, interval)
    return a + np.max(np.sum(x * x, axis=1))


def brute_sup_diff(p1, p2, interval, per_segment=2001):
    knots = np.union1d(p1.knots, p2.knots)
    knots = knots[(knots >= interval[0]) & (knots <= interval[1])]
    t, _ = dense_eval(knots, np.zeros((knots.size, 1)), per_segment, interval)
    diff = np.stack([np.interp(t, p1.knots, p1.values[:, j]) - np.interp(t, p2.knots, p2.values[:, j])
                     for j in range(p1.dim)], axis=1)
    return np.max(np.sqrt(np.sum(diff * diff, axis=1)))


def _affine(kn, vals, t):
    return np.array([np.interp(t, kn, vals[:, j]) for j in range(vals.shape[1])])


def _clip(poly, a, b, c):
    """Sutherland-Hodgman clip of ``poly`` to the half plane ``a u + b v <= c``."""
    out = []
    for i in range(len(poly)):
        p, q = poly[i], poly[(i + 1) % len(poly)]
        fp, fq = a * p[0] + b * p[1] - c, a * q[0] + b * q[1] - c
        if fp <= 0:
            out.append(p)
        if fp * fq < 0:
            s = fp / (fp - fq)
            out.append((p[0] + s * (q[0] - p[0]), p[1] + s * (q[1] - p[1])))
    return out


def polygon_modulus(path, h, interval):
    u1, u2 = interval
    inner = path.knots[(path.knots > u1) & (path.knots < u2)]
    edges = np.concatenate(([u1], inner, [u2]))
    best = 0.0
    for i in range(len(edges) - 1):
        for j in range(len(edges) - 1):
            rect = [(edges[i], edges[j]), (edges[i + 1], edges[j]),
                    (edges[i + 1], edges[j + 1]), (edges[i], edges[j + 1])]
            poly = _clip(_clip(rect, -1.0, 1.0, h), 1.0, -1.0, h)
            for u, v in poly:
                d = _affine(path.knots, path.values, u) - _affine(path.knots, path.values, v)
                best = max(best, float(np.sqrt(np.sum(d * d))))
    return best


def dense_modulus(path, h, interval, count=1000):
    t = np.linspace(interval[0], interval[1], count)
    x = np.stack([np.interp(t, path.knots, path.values[:, j]) for j in range(path.dim)], axis=1)
    dist = np.sqrt(np.sum((x[:, None, :] - x[None, :, :]) ** 2, axis=-1))
    mask = np.abs(t[:, None] - t[None, :]) <= h
    return float(np.max(np.where(mask, dist, 0.0)))


def random_path(rng, k=5, d=2, start=0.0, end=1.0):
    inner = np.sort(rng.uniform(start, end, size=k - 2))
    knots = np.concatenate(([start], inner, [end]))
    return PiecewiseLinearPath(knots, rng.normal(size=(k, d)))


# eval


def test_eval_examples():
    p = PiecewiseLinearPath([0, 1], [0, 2])
    assert p.eval(0.5)[0] == 1.0
    assert p.eval(0.0)[0] == 0.0
    q = PiecewiseLinearPath([0, 0.5, 1], [(1, 0), (0, 1), (1, 1)])
    np.testing.assert_array_equal(q.eval(0.25), [0.5, 0.5])


def test_eval_at_knots_is_exact():
    rng = np.random.default_rng(1)
    p = random_path(rng, k=40, d=3)
    for kt, v in zip(p.knots, p.values):
        assert np.array_equal(p.eval(kt), v)
    np.testing.assert_array_equal(p(p.knots), p.values)


def test_eval_out_of_domain():
    p = PiecewiseLinearPath([0, 1], [0, 2])
    with pytest.raises(OutOfDomain):
        p.eval(1.0000001)
    with pytest.raises(OutOfDomain):
        p.eval(-1e-300)


def test_construction_errors():
    with pytest.raises(InvalidParameter):
        PiecewiseLinearPath([0, 0], [1, 2])
    with pytest.raises(InvalidParameter):
        PiecewiseLinearPath([1, 0], [1, 2])
    with pytest.raises((InvalidParameter, DimensionMismatch)):
        PiecewiseLinearPath([0, 1], [1, 2, 3])
    with pytest.raises(InvalidParameter):
        PiecewiseLinearPath([], [])


def test_single_knot_path():
    p = PiecewiseLinearPath([0.0], [3.0])
    assert p.eval(0.0)[0] == 3.0
    assert p.sup_shifted_norm_sq(1.0, (0.0, 0.0)) == 10.0
    assert p.modulus(0.1, (0.0, 0.0)) == 0.0


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-1e6, 1e6), min_size=2, max_size=12), st.integers(0, 2**32 - 1))
def test_midpoint_is_average(vals, seed):
    rng = np.random.default_rng(seed)
    knots = np.cumsum(rng.uniform(0.01, 2.0, size=len(vals)))
    p = PiecewiseLinearPath(knots, vals)
    for i in range(len(vals) - 1):
        mid = 0.5 * (knots[i] + knots[i + 1])
        expected = 0.5 * (vals[i] + vals[i + 1])
        got = p.eval(mid)[0]
        # One rounding of the midpoint time, amplified by the slope, plus value roundings.
        slope = abs(vals[i + 1] - vals[i]) / (knots[i + 1] - knots[i])
        tol = 2 * slope * np.spacing(mid) + 4 * np.spacing(max(abs(vals[i]), abs(vals[i + 1])))
        assert abs(got - expected) <= tol


# TimeGrid


def test_uniform_grid_points():
    g = TimeGrid.uniform(0.7, 9)
    for k in range(10):
        assert g.points[k] == k * 0.7 / 9
    assert g.points[-1] == 0.7
    assert g.mesh() > 0
    with pytest.raises(InvalidParameter):
        TimeGrid.uniform(1.0, 0)


# sup_shifted_norm_sq


def test_sup_shifted_examples():
    assert PiecewiseLinearPath([0, 1], [0, 2]).sup_shifted_norm_sq(1.0, (0, 1)) == 5.0
    p = PiecewiseLinearPath([0, 0.5, 1], [3, 0, 1])
    assert p.sup_shifted_norm_sq(0.0, (0.25, 1)) == pytest.approx(2.25, abs=1e-15)
    # frozen from the brute-force oracle at 10^6 samples
    assert brute_sup_shifted(p, 0.0, (0.25, 1.0), per_segment=10**6) == pytest.approx(2.25, abs=1e-12)
    x = p.eval(0.3)
    assert p.sup_shifted_norm_sq(0.0, (0.3, 0.3)) == float(np.sum(x * x))


def test_sup_shifted_dense_oracle_1e5_per_segment():
    rng = np.random.default_rng(5)
    for _ in range(5):
        p = random_path(rng, k=6, d=2)
        u1, u2 = np.sort(rng.uniform(0, 1, size=2))
        a = rng.uniform(0, 2)
        exact = p.sup_shifted_norm_sq(a, (u1, u2))
        brute = brute_sup_shifted(p, a, (u1, u2), per_segment=10**5)
        assert abs(exact - brute) <= 1e-12 * abs(brute)


def test_sup_shifted_interval_errors():
    p = PiecewiseLinearPath([0, 1], [0, 2])
    with pytest.raises(OutOfDomain):
        p.sup_shifted_norm_sq(0.0, (-0.1, 0.5))
    with pytest.raises(InvalidParameter):
        p.sup_shifted_norm_sq(0.0, (0.6, 0.5))


# modulus


def test_modulus_examples():
    assert PiecewiseLinearPath([0, 1], [0, 2]).modulus(0.5, (0, 1)) == pytest.approx(1.0, abs=1e-15)
    assert PiecewiseLinearPath([0, 0.5, 1], [0, 1, 0]).modulus(1.0, (0, 1)) == 1.0
    with pytest.raises(InvalidParameter):
        PiecewiseLinearPath([0, 1], [0, 2]).modulus(0.0, (0, 1))


def test_modulus_random_2d_matches_oracles():
    rng = np.random.default_rng(11)
    p = random_path(rng, k=5, d=2)
    exact = p.modulus(0.3, (0, 1))
    assert abs(exact - polygon_modulus(p, 0.3, (0.0, 1.0))) <= 1e-12
    # A dense 10^6-pair grid can only approach the supremum from below.
    dense = dense_modulus(p, 0.3, (0.0, 1.0), count=1000)
    assert dense <= exact + 1e-12
    assert exact - dense < 0.02


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.01, 1.2))
def test_modulus_monotone_in_h_and_interval(seed, h):
    rng = np.random.default_rng(seed)
    p = random_path(rng, k=7, d=2)
    m1 = p.modulus(h, (0.2, 0.8))
    assert m1 <= p.modulus(h * 1.5, (0.2, 0.8)) + 1e-15
    assert m1 <= p.modulus(h, (0.0, 1.0)) + 1e-15


def test_modulus_full_window_is_oscillation():
    rng = np.random.default_rng(3)
    knots = np.sort(np.concatenate(([0, 1], rng.uniform(0, 1, 10))))
    p = PiecewiseLinearPath(knots, rng.normal(size=knots.size))
    assert p.modulus(1.0, (0, 1)) == np.max(p.values) - np.min(p.values)


# sup_norm_diff


def test_sup_norm_diff_examples():
    p1 = PiecewiseLinearPath([0, 1], [0, 0])
    p2 = PiecewiseLinearPath([0, 0.5, 1], [0, 1, 0])
    assert sup_norm_diff(p1, p1) == 0.0
    assert sup_norm_diff(p1, p2) == 1.0
    with pytest.raises(DimensionMismatch):
        sup_norm_diff(p1, PiecewiseLinearPath([0, 1], [(0, 0), (1, 1)]))
    with pytest.raises(OutOfDomain):
        sup_norm_diff(p1, PiecewiseLinearPath([0, 0.5], [0, 0]), (0, 1))


def test_sup_norm_diff_random_matches_dense():
    rng = np.random.default_rng(8)
    for _ in range(20):
        p1, p2 = random_path(rng, k=6, d=2), random_path(rng, k=4, d=2)
        assert abs(sup_norm_diff(p1, p2) - brute_sup_diff(p1, p2, (0.0, 1.0))) <= 1e-12


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_sup_norm_diff_triangle(seed):
    rng = np.random.default_rng(seed)
    a, b, c = (random_path(rng, k=rng.integers(2, 8), d=2) for _ in range(3))
    iv = tuple(np.sort(rng.uniform(0, 1, 2)))
    assert sup_norm_diff(a, c, iv) <= sup_norm_diff(a, b, iv) + sup_norm_diff(b, c, iv) + 1e-12


# restrict / csv


def test_restrict_keeps_knot_values():
    rng = np.random.default_rng(2)
    p = random_path(rng, k=10, d=1)
    r = p.restrict(p.knots[2], 0.9)
    assert r.domain == (p.knots[2], 0.9)
    inside = p.knots[(p.knots >= p.knots[2]) & (p.knots < 0.9)]
    for t in inside:
        assert np.array_equal(r.eval(t), p.eval(t))


def test_csv_round_trip():
    rng = np.random.default_rng(4)
    p = random_path(rng, k=9, d=3)
    text = p.to_csv()
    assert text.splitlines()[0] == "t,x_1,x_2,x_3"
    assert PiecewiseLinearPath.from_csv(io.StringIO(text)) == p
