import json
import operator
from functools import reduce

import numpy as np
import pytest

from sfde.errors import InvalidParameter, NonFinite
from sfde.montecarlo import fit_rate
from sfde.path import PiecewiseLinearPath, TimeGrid
from sfde.problem import CoefficientFunctional, Constants, ProblemSpec, builtin
from sfde.solver import (
    coarsen_increments,
    deterministic_reference,
    euler_step_run,
    generate_brownian,
    simulate_coupled,
    simulate_coupled_batch,
)


def custom(drift, diffusion, xi=0.0, T=1.0, tau=0.0, m=1):
    return ProblemSpec("custom", 1, m, T, tau, CoefficientFunctional(drift, diffusion),
                       PiecewiseLinearPath.constant([xi], -tau, 0.0), Constants())


def const_drift(v):
    return lambda t, x: np.full((x.n_paths, 1), float(v))


def const_diffusion(s, m=1):
    return lambda t, x: np.full((x.n_paths, 1, m), float(s))


def test_brownian_determinism_and_identity_coarsening():
    a = generate_brownian(2, 64, 1.0, 5, 3)
    b = generate_brownian(2, 64, 1.0, 5, 3)
    assert np.array_equal(a.increments, b.increments)
    assert np.array_equal(a.coarsen(1).increments, a.increments)
    with pytest.raises(InvalidParameter):
        a.coarsen(3)
    with pytest.raises(InvalidParameter):
        generate_brownian(1, 0, 1.0, 0, 0)
    with pytest.raises(InvalidParameter):
        generate_brownian(1, 4, 0.0, 0, 0)


def test_brownian_statistics():
    n, T = 2**20, 1.0
    inc = generate_brownian(1, n, T, 2024, 0).increments[:, 0]
    dt = T / n
    assert abs(inc.mean()) <= 4 * np.sqrt(dt) / np.sqrt(n)
    assert abs(inc.var() / dt - 1) < 0.01


def test_coarsening_sums():
    skel = generate_brownian(1, 4096, 2.0, 1, 9)
    for r in (2, 16, 256, 4096):
        coarse = skel.coarsen(r).increments
        # Same ascending-offset summation order as the implementation.
        blocked = skel.increments.reshape(-1, r, 1)
        acc = blocked[:, 0].copy()
        for j in range(1, r):
            acc += blocked[:, j]
        assert np.array_equal(coarse, acc)
        # Identical to a left-to-right scalar fold over ascending k.
        seq = np.array([reduce(operator.add, blocked[i, :, 0].tolist()) for i in range(blocked.shape[0])])
        assert np.array_equal(coarse[:, 0], seq)


def test_total_increment_invariant_under_coarsening():
    skel = generate_brownian(1, 1024, 1.0, 3, 3)
    fine_total = skel.increments.reshape(-1, 1024, 1).sum(axis=1)  # not the blocked order
    for r in (8, 64, 1024):
        assert abs(skel.coarsen(r).increments.sum() - fine_total.sum()) < 1e-12
    assert np.array_equal(skel.coarsen(1024).increments, coarsen_increments(skel.increments, 1024))


def test_constant_solution():
    prob = custom(const_drift(0.0), const_diffusion(0.0), xi=2.5)
    skel = generate_brownian(1, 50, 1.0, 0, 0)
    traj = euler_step_run(prob, skel.grid, skel.increments)
    assert np.all(traj.skeleton == 2.5)


def test_unit_drift():
    prob = custom(const_drift(1.0), const_diffusion(0.0), T=0.8)
    grid = TimeGrid.uniform(0.8, 40)
    traj = euler_step_run(prob, grid, np.zeros((40, 1)))
    np.testing.assert_allclose(traj.skeleton[:, 0], np.arange(41) * 0.8 / 40, rtol=0, atol=1e-15)


def test_additive_noise_telescopes():
    s, x0 = 0.7, 1.5
    prob = custom(const_drift(0.0), const_diffusion(s), xi=x0)
    run = simulate_coupled(prob, 1024, [8, 64, 1024], seed=11, stream_index=4)
    W = run.skeleton.values()[:, 0]
    assert np.max(np.abs(run.fine.skeleton[:, 0] - (x0 + s * W))) < 1e-12
    for n in (8, 64):
        r = 1024 // n
        assert np.max(np.abs(run.coarse[n].skeleton[:, 0] - run.fine.skeleton[::r, 0])) < 1e-12


def test_trajectory_invariants():
    prob = builtin("point_delay_linear")
    run = simulate_coupled(prob, 256, [16], 1, 2)
    traj = run.fine
    assert np.array_equal(traj.skeleton[0], prob.xi0)
    for t, y in zip(traj.grid.points, traj.skeleton):
        assert np.array_equal(traj.interpolant.eval(t), y)
    for t, v in zip(prob.initial_segment.knots, prob.initial_segment.values):
        assert np.array_equal(traj.interpolant.eval(t), v)
    assert traj.interpolant.domain == (-0.5, 1.0)


def test_nonfinite_aborts_with_step():
    prob = custom(lambda t, x: x.now() ** 2, const_diffusion(0.0), xi=10.0)
    grid = TimeGrid.uniform(1.0, 20)
    with pytest.raises(NonFinite) as info:
        euler_step_run(prob, grid, np.zeros((20, 1)))
    assert 1 <= info.value.step <= 20
    with pytest.raises(NonFinite) as info:
        simulate_coupled(prob, 32, [4], 0, 0)
    assert info.value.resolution == 32


def test_coupled_identity_and_divisibility():
    prob = builtin("point_delay_linear")
    run = simulate_coupled(prob, 128, [128], 3, 0)
    assert np.array_equal(run.coarse[128].skeleton, run.fine.skeleton)
    with pytest.raises(InvalidParameter):
        simulate_coupled(prob, 128, [48], 3, 0)


def test_coupled_determinism_and_batch_equivalence():
    prob = builtin("running_max_drift")
    a = simulate_coupled(prob, 512, [8, 64], 42, 7)
    b = simulate_coupled(prob, 512, [8, 64], 42, 7)
    assert np.array_equal(a.fine.skeleton, b.fine.skeleton)
    batch = simulate_coupled_batch(prob, 512, [8, 64], 42, [5, 6, 7])
    assert np.array_equal(batch.fine.skeleton[2], a.fine.skeleton)
    assert np.array_equal(batch.coarse[8].skeleton[2], a.coarse[8].skeleton)


def test_point_delay_coarse_error_positive():
    prob = builtin("point_delay_linear")
    batch = simulate_coupled_batch(prob, 4096, [16], 99, np.arange(100))
    err = np.max(np.abs(batch.coarse[16].skeleton[:, 1:, 0] - batch.fine.skeleton[:, ::256][:, 1:, 0]), axis=1)
    assert np.all(err > 0)


def test_doubling_keeps_initial_value():
    prob = builtin("point_delay_linear")
    a = simulate_coupled(prob, 64, [32], 1, 1)
    assert np.array_equal(a.fine.skeleton[0], a.coarse[32].skeleton[0])
    add = custom(const_drift(0.3), const_diffusion(0.0), xi=1.0)
    for n in (16, 32):
        y = simulate_coupled(add, n, [n], 0, 0).fine.skeleton[:, 0]
        np.testing.assert_allclose(y, 1.0 + 0.3 * np.arange(n + 1) / n, atol=1e-15)


def test_zero_noise_seed_independent_and_first_order():
    prob = builtin("zero_noise_delay_ode")
    a = simulate_coupled(prob, 256, [16], 1, 0)
    b = simulate_coupled(prob, 256, [16], 999, 3)
    assert np.array_equal(a.fine.skeleton, b.fine.skeleton)
    oracle = deterministic_reference(prob, 2**16)
    ns = [2**k for k in range(4, 11)]
    errs = []
    for n in ns:
        traj = euler_step_run(prob, TimeGrid.uniform(1.0, n), np.zeros((n, 1)))
        ref = oracle.eval(traj.grid.points)
        errs.append(np.max(np.abs(traj.skeleton[1:, 0] - ref[1:, 0])))
    assert abs(fit_rate(ns, errs).rate - 1.0) <= 0.15


def test_export(tmp_path):
    prob = builtin("point_delay_linear")
    run = simulate_coupled(prob, 64, [8, 16], 5, 2)
    files = run.export(tmp_path, prob)
    assert files == ["coarse_16.csv", "coarse_8.csv", "fine.csv", "meta.json"]
    meta = json.loads((tmp_path / "meta.json").read_text())
    assert meta["seed"] == 5 and meta["stream"] == 2 and meta["problem_hash"] == prob.problem_hash
    lines = (tmp_path / "coarse_8.csv").read_text().splitlines()
    assert lines[0] == "t,y_1" and len(lines) == 10
    assert float(lines[-1].split(",")[1]) == run.coarse[8].skeleton[-1, 0]
    assert not list(tmp_path.glob(".*"))
