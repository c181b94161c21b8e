"""Brownian skeletons and the path-dependent Euler-Maruyama scheme.

The scheme on a uniform grid ``t_k = kT/n`` is

    Y_0 = xi(0),
    Y_{k+1} = Y_k + mu(t_k, Ybar) (t_{k+1} - t_k) + sigma(t_k, Ybar) (W_{t_{k+1}} - W_{t_k}),

where ``Ybar`` is ``xi`` on ``[-tau, 0]`` glued to the linear interpolation of
``Y_0, ..., Y_k``. The functionals read ``Ybar`` through a
:class:`~sfde.problem.History` that ends at ``t_k``.

All stepping is vectorised over an ensemble of ``M`` independent paths that
share the time grid; paths never interact, so a path's iterates do not depend
on which other paths share its batch.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidParameter, NonFinite
from .path import PiecewiseLinearPath, TimeGrid
from .problem import History, ProblemSpec, RunningStats, call_diffusion, call_drift
from .rng import gaussian_block


@dataclass(frozen=True)
class BrownianSkeleton:
    """Increments of an ``m``-dimensional Wiener path on a uniform grid.

    ``increments[k, j] = sqrt(T/n) * Z(seed, stream_index, k, j)`` with ``Z`` the
    counter-based standard normal of :mod:`sfde.rng`.
    """

    grid: TimeGrid
    increments: np.ndarray
    seed: int
    stream_index: int

    @property
    def n(self) -> int:
        return self.grid.n

    @property
    def dim(self) -> int:
        return self.increments.shape[1]

    def coarsen(self, factor: int) -> "BrownianSkeleton":
        factor = int(factor)
        if factor < 1 or self.n % factor:
            raise InvalidParameter(f"factor {factor} does not divide {self.n}")
        grid = TimeGrid.uniform(self.grid.horizon, self.n // factor)
        return BrownianSkeleton(grid, coarsen_increments(self.increments, factor),
                                self.seed, self.stream_index)

    def values(self) -> np.ndarray:
        """``W`` at the grid points, shape ``(n+1, m)``, starting from 0."""
        return brownian_values(self.increments)


def brownian_increments(m, n, horizon, seed, streams) -> np.ndarray:
    """Increments for many streams at once, shape ``(len(streams), n, m)``."""
    n = int(n)
    m = int(m)
    if n < 1 or m < 1:
        raise InvalidParameter(f"need n >= 1 and m >= 1, got n={n}, m={m}")
    if not horizon > 0:
        raise InvalidParameter(f"horizon must be positive, got {horizon}")
    return np.sqrt(horizon / n) * gaussian_block(seed, streams, n, m)


def generate_brownian(m: int, n_fine: int, horizon: float, seed: int, stream_index: int) -> BrownianSkeleton:
    inc = brownian_increments(m, n_fine, horizon, seed, [stream_index])[0]
    return BrownianSkeleton(TimeGrid.uniform(horizon, n_fine), inc, int(seed), int(stream_index))


def coarsen_increments(increments: np.ndarray, factor: int) -> np.ndarray:
    """Block sums over ``factor`` consecutive steps (axis ``-2``), added in ascending order."""
    factor = int(factor)
    n = increments.shape[-2]
    if factor < 1 or n % factor:
        raise InvalidParameter(f"factor {factor} does not divide {n}")
    if factor == 1:
        return increments.copy()
    acc = increments[..., 0::factor, :].copy()
    for offset in range(1, factor):
        acc += increments[..., offset::factor, :]
    return acc


def brownian_values(increments: np.ndarray) -> np.ndarray:
    """Running sums with a leading zero along the step axis (``-2``)."""
    shape = increments.shape[:-2] + (1, increments.shape[-1])
    return np.concatenate((np.zeros(shape), np.cumsum(increments, axis=-2)), axis=-2)


@dataclass(frozen=True)
class Trajectory:
    grid: TimeGrid
    skeleton: np.ndarray
    interpolant: PiecewiseLinearPath

    def to_csv(self) -> str:
        lines = ["t," + ",".join(f"y_{j + 1}" for j in range(self.skeleton.shape[1]))]
        for t, row in zip(self.grid.points, self.skeleton):
            lines.append(",".join([format(t, ".17g")] + [format(v, ".17g") for v in row]))
        return "\n".join(lines) + "\n"


@dataclass
class EulerBatch:
    """Iterates for ``M`` paths on one grid.

    ``skeleton`` has shape ``(M, n+1, d)``; ``aborted[i]`` marks paths that went
    non-finite and ``abort_step[i]`` the first offending step (``-1`` if none).
    """

    grid: TimeGrid
    skeleton: np.ndarray
    aborted: np.ndarray
    abort_step: np.ndarray
    knots: np.ndarray = field(repr=False)
    buffer: np.ndarray = field(repr=False)

    def interpolant(self, i: int) -> PiecewiseLinearPath:
        return PiecewiseLinearPath(self.knots, self.buffer[i])


def glued_knots(problem: ProblemSpec, grid: TimeGrid) -> np.ndarray:
    """Knots of ``xi`` on ``[-tau, 0)`` followed by the grid points."""
    return np.concatenate((problem.initial_segment.knots[:-1], grid.points))


def euler_batch(problem: ProblemSpec, grid: TimeGrid, increments: np.ndarray) -> EulerBatch:
    """Run the scheme for every row of ``increments`` (shape ``(M, n, m)``)."""
    increments = np.asarray(increments, dtype=np.float64)
    if increments.ndim != 3 or increments.shape[1] != grid.n or increments.shape[2] != problem.dim_noise:
        raise InvalidParameter(
            f"increments must have shape (M, {grid.n}, {problem.dim_noise}), got {increments.shape}"
        )
    M, n = increments.shape[0], grid.n
    d = problem.dim_state
    xi = problem.initial_segment
    head = len(xi) - 1
    knots = glued_knots(problem, grid)
    buf = np.empty((M, knots.size, d))
    buf[:, : head + 1] = xi.values
    steps = grid.steps()
    times = grid.points
    aborted = np.zeros(M, dtype=bool)
    abort_step = np.full(M, -1, dtype=np.int64)
    stats = RunningStats()
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(n):
            hist = History(knots, buf, head + k + 1, stats)
            t = float(times[k])
            mu = call_drift(problem, t, hist)
            sig = call_diffusion(problem, t, hist)
            y = buf[:, head + k]
            noise = np.sum(sig * increments[:, k, None, :], axis=2)
            nxt = y + mu * steps[k] + noise
            buf[:, head + k + 1] = nxt
            bad = ~np.all(np.isfinite(nxt), axis=1)
            if bad.any():
                fresh = bad & ~aborted
                abort_step[fresh] = k + 1
                aborted |= bad
    skeleton = buf[:, head:]
    return EulerBatch(grid, skeleton, aborted, abort_step, knots, buf)


def euler_step_run(problem: ProblemSpec, grid: TimeGrid, increments: np.ndarray) -> Trajectory:
    """Single-path scheme; raises :class:`NonFinite` with the first bad step index."""
    increments = np.asarray(increments, dtype=np.float64)
    if increments.ndim == 1:
        increments = increments[:, None]
    batch = euler_batch(problem, grid, increments[None])
    if batch.aborted[0]:
        raise NonFinite(int(batch.abort_step[0]), grid.n)
    return Trajectory(grid, batch.skeleton[0].copy(), batch.interpolant(0))


def deterministic_reference(problem: ProblemSpec, n: int) -> PiecewiseLinearPath:
    """Interpolant of the scheme driven by a zero Brownian path."""
    grid = TimeGrid.uniform(problem.horizon, n)
    return euler_step_run(problem, grid, np.zeros((n, problem.dim_noise))).interpolant


@dataclass(frozen=True)
class CoupledRun:
    """A fine run plus coarse runs driven by block sums of the same increments."""

    skeleton: BrownianSkeleton
    fine: Trajectory
    coarse: dict

    def export(self, directory, problem: ProblemSpec) -> list:
        """Write ``fine.csv``, ``coarse_<n>.csv`` and ``meta.json``; returns the file names."""
        from .io import atomic_write_text, dumps_json

        names = {"fine.csv": self.fine.to_csv()}
        for n in sorted(self.coarse):
            names[f"coarse_{n}.csv"] = self.coarse[n].to_csv()
        meta = {
            "seed": self.skeleton.seed,
            "stream": self.skeleton.stream_index,
            "problem_hash": problem.problem_hash,
            "problem": problem.describe(),
            "n_fine": self.skeleton.n,
            "coarse_ns": sorted(self.coarse),
        }
        names["meta.json"] = dumps_json(meta)
        for name, text in names.items():
            atomic_write_text(directory, name, text)
        return sorted(names)


def _check_coarse(n_fine, coarse_ns):
    n_fine = int(n_fine)
    if n_fine < 1:
        raise InvalidParameter(f"n_fine must be >= 1, got {n_fine}")
    out = []
    for n in coarse_ns:
        n = int(n)
        if n < 1 or n_fine % n:
            raise InvalidParameter(f"coarse step count {n} does not divide n_fine={n_fine}")
        out.append(n)
    return n_fine, sorted(set(out))


def simulate_coupled(problem: ProblemSpec, n_fine: int, coarse_ns, seed: int, stream_index: int) -> CoupledRun:
    n_fine, coarse_ns = _check_coarse(n_fine, coarse_ns)
    skel = generate_brownian(problem.dim_noise, n_fine, problem.horizon, seed, stream_index)
    try:
        fine = euler_step_run(problem, skel.grid, skel.increments)
    except NonFinite as exc:
        raise NonFinite(exc.step, n_fine) from None
    coarse = {}
    for n in coarse_ns:
        sub = skel.coarsen(n_fine // n)
        try:
            coarse[n] = euler_step_run(problem, sub.grid, sub.increments)
        except NonFinite as exc:
            raise NonFinite(exc.step, n) from None
    return CoupledRun(skel, fine, coarse)


@dataclass
class CoupledBatch:
    """Ensemble version of :class:`CoupledRun` for streams ``streams``."""

    streams: np.ndarray
    fine: EulerBatch
    coarse: dict
    increments: np.ndarray = field(repr=False)

    def aborted(self) -> np.ndarray:
        out = self.fine.aborted.copy()
        for b in self.coarse.values():
            out |= b.aborted
        return out


def simulate_coupled_batch(problem: ProblemSpec, n_fine: int, coarse_ns, seed: int, streams) -> CoupledBatch:
    n_fine, coarse_ns = _check_coarse(n_fine, coarse_ns)
    streams = np.asarray(streams, dtype=np.uint64)
    inc = brownian_increments(problem.dim_noise, n_fine, problem.horizon, seed, streams)
    fine = euler_batch(problem, TimeGrid.uniform(problem.horizon, n_fine), inc)
    coarse = {}
    for n in coarse_ns:
        if n == n_fine:
            coarse[n] = fine
            continue
        coarse[n] = euler_batch(problem, TimeGrid.uniform(problem.horizon, n),
                                coarsen_increments(inc, n_fine // n))
    return CoupledBatch(streams, fine, coarse, inc)
