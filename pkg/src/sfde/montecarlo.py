"""Ensemble estimators, rate regression and bootstrap intervals.

Parallel contract: trajectory ``i`` always uses ``stream_index = i``; the
ensemble is cut into fixed chunks of consecutive indices, chunks may run on
any number of worker threads, and every reduction runs over the
concatenated per-path arrays in index order. Output therefore does not depend
on the thread count.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from . import bounds
from .errors import DegenerateErrors, InvalidParameter, InvalidScenario, TooManyAborts
from .io import dumps_json, fmt
from .path import TimeGrid, batch_modulus, batch_sup_shifted_norm_sq
from .problem import ProblemSpec, builtin
from .solver import brownian_increments, brownian_values, euler_batch, simulate_coupled_batch

ABORT_LIMIT = 0.01
DEFAULT_CHUNK = 500


def _chunks(total: int, size: int):
    return [np.arange(s, min(s + size, total), dtype=np.uint64) for s in range(0, total, size)]


def _map_chunks(fn, total, size, threads):
    chunks = _chunks(total, size)
    if threads <= 1 or len(chunks) == 1:
        return [fn(c) for c in chunks]
    with ThreadPoolExecutor(max_workers=int(threads)) as pool:
        return list(pool.map(fn, chunks))


def _check_aborts(aborted: int, total: int):
    if aborted > ABORT_LIMIT * total:
        raise TooManyAborts(aborted, total)


def q_norm(samples: np.ndarray, q: float) -> float:
    """``(mean |x|^q)^(1/q)``; exact for constant samples."""
    samples = np.abs(np.asarray(samples, dtype=np.float64))
    if samples.size == 0:
        return math.nan
    top = float(np.max(samples))
    if top == 0.0:
        return 0.0
    if np.all(samples == top):
        return top
    # Scale by the maximum so large q cannot overflow.
    scaled = samples / top
    return top * float(np.mean(scaled**q)) ** (1.0 / q)


def bootstrap_qnorm_ci(samples, q: float, resamples: int, seed, level: float = 0.95):
    """Percentile interval of the q-norm under nonparametric resampling of ``samples``."""
    samples = np.abs(np.asarray(samples, dtype=np.float64))
    if samples.size == 0:
        return math.nan, math.nan
    if resamples < 1:
        raise InvalidParameter("bootstrap needs at least one resample")
    top = float(np.max(samples))
    if top == 0.0 or np.all(samples == top):
        return top, top
    powered = (samples / top) ** q
    rng = np.random.default_rng(seed)
    m = samples.size
    stats = np.empty(resamples)
    block = max(1, (1 << 22) // m)
    for start in range(0, resamples, block):
        count = min(block, resamples - start)
        idx = rng.integers(0, m, size=(count, m))
        stats[start:start + count] = np.mean(powered[idx], axis=1)
    stats = top * stats ** (1.0 / q)
    tail = 50.0 * (1.0 - level)
    lo, hi = np.percentile(stats, [tail, 100.0 - tail])
    return float(lo), float(hi)


@dataclass(frozen=True)
class RateFit:
    """OLS fit of ``log2(error)`` on ``log2(n)``; ``rate = -slope``."""

    slope: float
    intercept: float
    slope_stderr: float
    r_squared: float
    points: tuple

    @property
    def rate(self) -> float:
        return -self.slope

    def to_dict(self) -> dict:
        return {
            "slope": self.slope,
            "intercept": self.intercept,
            "slope_stderr": self.slope_stderr,
            "r_squared": self.r_squared,
            "rate": self.rate,
            "points": [list(p) for p in self.points],
        }


def fit_rate(ns, errors) -> RateFit:
    ns = np.asarray(ns, dtype=np.float64)
    errors = np.asarray(errors, dtype=np.float64)
    if ns.shape != errors.shape or ns.size < 2:
        raise InvalidParameter("need at least two (n, error) pairs of matching length")
    if np.unique(ns).size < 2:
        raise InvalidParameter("need at least two distinct step counts")
    if not (np.all(np.isfinite(errors)) and np.all(errors > 0)):
        raise DegenerateErrors("errors must be finite and strictly positive for a log-log fit")
    x = np.log2(ns)
    y = np.log2(errors)
    xm, ym = x.mean(), y.mean()
    sxx = float(np.sum((x - xm) ** 2))
    slope = float(np.sum((x - xm) * (y - ym)) / sxx)
    intercept = float(ym - slope * xm)
    resid = y - (intercept + slope * x)
    sse = float(np.sum(resid**2))
    sst = float(np.sum((y - ym) ** 2))
    r2 = 1.0 - sse / sst if sst > 0 else 1.0
    dof = x.size - 2
    stderr = math.sqrt(sse / dof / sxx) if dof > 0 else math.nan
    return RateFit(slope, intercept, stderr, r2, tuple(zip(x.tolist(), y.tolist())))


# Strong-error study


@dataclass(frozen=True)
class ErrorStudyConfig:
    """``problem`` is a builtin name (with ``params``) or a ready :class:`ProblemSpec`.

    ``reference`` selects the comparison path: ``"fine"`` uses the ``n_fine``
    run on the same Brownian path, ``"oracle"`` the problem's exact solution.
    """

    problem: Union[str, ProblemSpec]
    coarse_ns: tuple
    n_fine: int
    num_paths: int
    q: float = 2.0
    seed: int = 0
    bootstrap_resamples: int = 1000
    reference: str = "fine"
    params: dict = field(default_factory=dict)
    chunk_size: int = DEFAULT_CHUNK

    def __post_init__(self):
        ns = tuple(sorted({int(n) for n in self.coarse_ns}))
        object.__setattr__(self, "coarse_ns", ns)
        if not ns:
            raise InvalidParameter("coarse_ns must not be empty")
        if min(ns) < 1:
            raise InvalidParameter("coarse step counts must be positive")
        if any(self.n_fine % n for n in ns):
            raise InvalidParameter(f"every coarse n must divide n_fine={self.n_fine}")
        if self.n_fine < 8 * max(ns):
            raise InvalidParameter(f"n_fine must be >= 8 * max(coarse_ns) = {8 * max(ns)}")
        if self.num_paths < 2:
            raise InvalidParameter("num_paths must be >= 2")
        if not self.q >= 1:
            raise InvalidParameter(f"q must be >= 1, got {self.q}")
        if self.reference not in ("fine", "oracle"):
            raise InvalidParameter(f"reference must be 'fine' or 'oracle', got {self.reference!r}")
        if self.bootstrap_resamples < 1 or self.chunk_size < 1:
            raise InvalidParameter("bootstrap_resamples and chunk_size must be positive")
        if self.reference == "oracle" and self.resolve().oracle is None:
            raise InvalidParameter("reference='oracle' needs a problem with an exact solution")

    def resolve(self) -> ProblemSpec:
        if isinstance(self.problem, ProblemSpec):
            return self.problem
        return builtin(self.problem, **self.params)

    def to_dict(self) -> dict:
        spec = self.resolve()
        return {
            "problem": spec.describe(),
            "problem_hash": spec.problem_hash,
            "coarse_ns": list(self.coarse_ns),
            "n_fine": self.n_fine,
            "num_paths": self.num_paths,
            "q": self.q,
            "seed": self.seed,
            "bootstrap_resamples": self.bootstrap_resamples,
            "reference": self.reference,
        }


@dataclass(frozen=True)
class StudyRow:
    n: int
    q_norm: float
    ci_lo: float
    ci_hi: float
    aborted: int
    proxy_q_norm: float
    oracle_q_norm: Optional[float]
    log_bound: Optional[float]

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass(frozen=True)
class StudyResult:
    config: ErrorStudyConfig
    rows: tuple
    fit: Optional[RateFit]
    degenerate: bool
    excluded: int
    errors: dict = field(repr=False, compare=False)

    @property
    def rate(self) -> Optional[float]:
        return None if self.fit is None else self.fit.rate

    def row(self, n: int) -> StudyRow:
        for r in self.rows:
            if r.n == n:
                return r
        raise KeyError(n)

    def to_dict(self) -> dict:
        return {
            "config": self.config.to_dict(),
            "per_n": [r.to_dict() for r in self.rows],
            "fit": None if self.fit is None else self.fit.to_dict(),
            "degenerate": self.degenerate,
            "excluded_paths": self.excluded,
        }

    def to_json(self) -> str:
        return dumps_json(self.to_dict())

    def to_csv(self) -> str:
        cols = ["n", "q_norm", "ci_lo", "ci_hi", "aborted", "proxy_q_norm", "oracle_q_norm", "log_bound"]
        lines = [",".join(cols)]
        for r in self.rows:
            cells = []
            for c in cols:
                v = getattr(r, c)
                cells.append("" if v is None else (str(v) if isinstance(v, int) else fmt(v)))
            lines.append(",".join(cells))
        return "\n".join(lines) + "\n"


def _sup_knot_error(coarse_skel, ref, floor):
    diff = coarse_skel[:, 1:, :] - ref[:, 1:, :]
    err = np.max(np.sqrt(np.sum(diff * diff, axis=-1)), axis=-1)
    # Differences at summation-roundoff level mean the scheme is exact here.
    return np.where(err <= floor, 0.0, err)


def _roundoff_floor(fine_skel, n_fine):
    scale = np.max(np.sqrt(np.sum(fine_skel * fine_skel, axis=-1)), axis=-1)
    return n_fine * np.finfo(np.float64).eps * (1.0 + scale)


def _study_chunk(spec: ProblemSpec, cfg: ErrorStudyConfig, streams):
    batch = simulate_coupled_batch(spec, cfg.n_fine, cfg.coarse_ns, cfg.seed, streams)
    fine = batch.fine.skeleton
    W = brownian_values(batch.increments) if spec.oracle is not None else None
    grid = TimeGrid.uniform(spec.horizon, cfg.n_fine)
    out = {"aborted": {}, "proxy": {}, "oracle": {}, "any": batch.aborted()}
    with np.errstate(invalid="ignore", over="ignore"):
        floor = _roundoff_floor(fine, cfg.n_fine)
    for n in cfg.coarse_ns:
        r = cfg.n_fine // n
        coarse = batch.coarse[n]
        out["aborted"][n] = coarse.aborted | batch.fine.aborted
        with np.errstate(invalid="ignore", over="ignore"):
            out["proxy"][n] = _sup_knot_error(coarse.skeleton, fine[:, ::r], floor)
            if W is not None:
                times = grid.points[::r]
                exact = spec.oracle(times, W[:, ::r])
                out["oracle"][n] = _sup_knot_error(coarse.skeleton, exact, floor)
    return out


def strong_error_study(config: ErrorStudyConfig, threads: int = 1) -> StudyResult:
    """Coupled Monte Carlo estimate of ``(E[max_k |Y^n_k - X_{t_k}|^q])^(1/q)`` per coarse ``n``."""
    spec = config.resolve()
    parts = _map_chunks(lambda s: _study_chunk(spec, config, s), config.num_paths,
                        config.chunk_size, threads)
    excluded = np.concatenate([p["any"] for p in parts])
    _check_aborts(int(excluded.sum()), config.num_paths)
    keep = ~excluded
    has_oracle = spec.oracle is not None
    rows, errors = [], {}
    fit_values = []
    p_const = spec.constants.p
    for n in config.coarse_ns:
        proxy = np.concatenate([p["proxy"][n] for p in parts])[keep]
        oracle = np.concatenate([p["oracle"][n] for p in parts])[keep] if has_oracle else None
        chosen = oracle if config.reference == "oracle" else proxy
        errors[n] = chosen
        qn = q_norm(chosen, config.q)
        lo, hi = bootstrap_qnorm_ci(chosen, config.q, config.bootstrap_resamples, [config.seed, n])
        log_bound = None
        if config.q < p_const:
            params = bounds.BoundParams.for_problem(spec, config.q, mesh=spec.horizon / n)
            log_bound = bounds.strong_error_log_bound(params)
        rows.append(StudyRow(
            n=n, q_norm=qn, ci_lo=lo, ci_hi=hi,
            aborted=int(np.concatenate([p["aborted"][n] for p in parts]).sum()),
            proxy_q_norm=q_norm(proxy, config.q),
            oracle_q_norm=q_norm(oracle, config.q) if has_oracle else None,
            log_bound=log_bound,
        ))
        fit_values.append(qn)
    try:
        fit = fit_rate(config.coarse_ns, fit_values) if len(config.coarse_ns) >= 2 else None
        degenerate = False
    except DegenerateErrors:
        fit, degenerate = None, True
    return StudyResult(config, tuple(rows), fit, degenerate, int(excluded.sum()), errors)


# Moment, modulus and Gronwall checks


def _euler_ensemble(problem: ProblemSpec, n: int, num_paths: int, seed: int, threads: int,
                    chunk_size: int, reduce):
    """Run ``num_paths`` single-resolution paths and apply ``reduce(batch)`` per chunk."""
    if n < 1:
        raise InvalidParameter(f"n must be >= 1, got {n}")
    if num_paths < 2:
        raise InvalidParameter("num_paths must be >= 2")
    grid = TimeGrid.uniform(problem.horizon, n)

    def work(streams):
        inc = brownian_increments(problem.dim_noise, n, problem.horizon, seed, streams)
        batch = euler_batch(problem, grid, inc)
        with np.errstate(invalid="ignore", over="ignore"):
            return batch.aborted, reduce(batch)

    parts = _map_chunks(work, num_paths, chunk_size, threads)
    aborted = np.concatenate([p[0] for p in parts])
    _check_aborts(int(aborted.sum()), num_paths)
    values = np.concatenate([p[1] for p in parts])[~aborted]
    return values, int(aborted.sum())


def _stderr(x: np.ndarray) -> float:
    if x.size < 2:
        return math.nan
    return float(np.std(x, ddof=1) / math.sqrt(x.size))


@dataclass(frozen=True)
class MomentEstimate:
    estimate: float
    stderr: float
    log_estimate: float
    log_bound: float
    log_bound_margin: float
    aborted: int
    num_paths: int

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def sup_moment_estimate(problem: ProblemSpec, n: int, num_paths: int, q: float, seed: int,
                        threads: int = 1, chunk_size: int = DEFAULT_CHUNK) -> MomentEstimate:
    """Estimate ``E[(sup_{[-tau,T]} (a + |X|^2))^(q/2)]`` from exact interpolant suprema."""
    if not q >= 2:
        raise InvalidParameter(f"q must be >= 2, got {q}")
    a = problem.constants.a
    domain = (-problem.delay, problem.horizon)

    def reduce(batch):
        sup = batch_sup_shifted_norm_sq(batch.knots, batch.buffer, a, domain)
        return sup ** (0.5 * q)

    samples, aborted = _euler_ensemble(problem, n, num_paths, seed, threads, chunk_size, reduce)
    est = float(np.mean(samples))
    log_bound = bounds.moment_log_bound(bounds.BoundParams.for_problem(problem, q))
    log_est = math.log(est)
    return MomentEstimate(est, _stderr(samples), log_est, log_bound, log_bound - log_est,
                          aborted, num_paths)


@dataclass(frozen=True)
class ModulusEstimate:
    q_norm: float
    stderr: float
    h: float
    window_log_bound: float
    window_margin: float
    chained_log_bound: float
    chained_margin: float
    aborted: int
    num_paths: int
    labels: dict = field(default_factory=lambda: {
        "window": "indicative: single-window bound compared with the all-window modulus",
        "chained": "global: windows chained with a ceil(T/h)^(1/q) factor",
    })

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def modulus_estimate(problem: ProblemSpec, n: int, num_paths: int, h: float, q: float, seed: int,
                     threads: int = 1, chunk_size: int = DEFAULT_CHUNK) -> ModulusEstimate:
    """L^q norm of the exact modulus of the interpolant over ``[0, T]`` with window ``h``."""
    T = problem.horizon
    if not 0 < h <= T:
        raise InvalidParameter(f"h must lie in (0, T], got {h}")
    if not q >= 2:
        raise InvalidParameter(f"q must be >= 2, got {q}")

    def reduce(batch):
        return batch_modulus(batch.knots, batch.buffer, h, (0.0, T))

    samples, aborted = _euler_ensemble(problem, n, num_paths, seed, threads, chunk_size, reduce)
    qn = q_norm(samples, q)
    powered = samples**q
    # Delta method for (mean x^q)^(1/q).
    if qn > 0:
        se = float(qn ** (1 - q) / q * _stderr(powered))
    else:
        se = 0.0
    params = bounds.BoundParams.for_problem(problem, q)
    window = bounds.increment_log_bound(params, h)
    chained = bounds.chained_modulus_log_bound(params, h)
    log_qn = math.log(qn) if qn > 0 else -math.inf
    return ModulusEstimate(qn, se, h, window, window - log_qn, chained, chained - log_qn,
                           aborted, num_paths)


@dataclass(frozen=True)
class GronwallReport:
    scenario: str
    lhs_estimate: float
    log_lhs: float
    log_rhs_bound: float
    margin: float
    holds: bool
    details: dict

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def _report(scenario, lhs, log_rhs, details):
    log_lhs = math.log(lhs) if lhs > 0 else -math.inf
    margin = log_rhs - log_lhs
    holds = bool(log_lhs <= log_rhs)
    return GronwallReport(scenario, lhs, log_lhs, log_rhs, margin, holds, details)


def _g1(alpha=1.0, H=1.0, p=0.5, T=1.0):
    # X_t = H e^(alpha t) solves X_t = int_0^t alpha sup_{r<=s} X_r ds + H with M = 0.
    if not (alpha >= 0 and H > 0 and T >= 0):
        raise InvalidParameter("G1 needs alpha >= 0, H > 0, T >= 0")
    log_lhs = p * (math.log(H) + alpha * T)
    log_rhs = bounds.ms_gronwall_log_bound(p, alpha * T, p * math.log(H))
    details = {"alpha": alpha, "H": H, "p": p, "T": T,
               "solution": "X_t = H exp(alpha t)", "lhs_kind": "exact"}
    return _report("G1", math.exp(log_lhs), log_rhs, details)


def gronwall_g2_inputs(problem: ProblemSpec, q: float) -> bounds.GronwallInputs:
    """Path-supremum Gronwall inputs for ``V = a + |x|^2`` with exponents ``p_G = q`` and ``q_G = q/2``.

    The growth condition gives, for the generator terms of ``V``,
    ``2<x, mu> + |sigma|^2 + 2(p_G - 1)|sigma^T x|^2 / V <= (2 p_G + 1) c sup_{[-tau,s]} V``,
    and ``sup_{[-tau,s]} V <= sup_{[0,s]} V + (a + sup|xi|^2)``. So
    ``alpha = lambda = (2 p_G + 1) c``, ``beta = a + sup|xi|^2``, ``gamma = 0``.
    """
    if not q >= 1:
        raise InvalidParameter(f"q must be >= 1, got {q}")
    k = problem.constants
    rate = (2 * q + 1) * k.c
    v0 = k.a + float(np.sum(problem.xi0**2))
    beta = k.a + problem.xi_sup_norm_sq()
    return bounds.GronwallInputs.from_constants(q, q / 2, problem.horizon, rate, rate, beta=beta,
                                                gamma=0.0, v0=v0)


def _g2(M, seed, problem=None, q=2.0, n=256, threads=1, **params):
    if problem is None:
        problem = "point_delay_linear"
    spec = problem if isinstance(problem, ProblemSpec) else builtin(problem, **params)
    inputs = gronwall_g2_inputs(spec, q)
    a = spec.constants.a

    def reduce(batch):
        sup = batch_sup_shifted_norm_sq(batch.knots, batch.buffer, a, (0.0, spec.horizon))
        return sup ** inputs.q

    samples, aborted = _euler_ensemble(spec, int(n), int(M), seed, threads, DEFAULT_CHUNK, reduce)
    lhs = float(np.mean(samples))
    details = {"problem": spec.describe(), "n": int(n), "num_paths": int(M), "q": q,
               "p_gronwall": inputs.p, "q_gronwall": inputs.q, "aborted": aborted,
               "stderr": _stderr(samples), "lhs_kind": "monte_carlo"}
    return _report("G2", lhs, bounds.gronwall_log_bound(inputs), details)


def gronwall_empirical_check(scenario: str, M: int = 1000, seed: int = 0, **params) -> GronwallReport:
    """Compare a Gronwall bound against its left-hand side.

    ``G1``: deterministic scenario with constant ``alpha``, ``H`` (params
    ``alpha, H, p, T``). ``G2``: an SFDE with ``V = a + |x|^2`` (params
    ``problem, q, n, threads`` plus builtin parameters).
    """
    key = str(scenario).upper()
    if key == "G1":
        return _g1(**params)
    if key == "G2":
        return _g2(M, seed, **params)
    raise InvalidScenario(f"unknown Gronwall scenario {scenario!r}; choose G1 or G2")
