"""SFDE instances: coefficient functionals, initial segment, assumption constants.

Coefficient functionals never see a whole path. They are called as
``drift(t, hist)`` / ``diffusion(t, hist)`` where ``hist`` is a
:class:`History`: an ensemble of ``M`` paths known on ``[-tau, t]`` only.
Asking a history for a time after ``t`` raises :class:`AnticipationError`, so
non-anticipation holds by construction rather than by convention.

Functionals must be pure and vectorised over the ensemble: the drift returns
shape ``(M, d)`` (or anything broadcastable to it), the diffusion ``(M, d, m)``.
"""

from __future__ import annotations

import hashlib
import inspect
import json
import threading
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import (
    AnticipationError,
    DimensionMismatch,
    InvalidParameter,
    OutOfDomain,
    UnknownProblem,
)
from .path import PiecewiseLinearPath, interpolate, locate, sup_norm_diff


def _update_extrema(prev, knots, values, done, count):
    chunk = values[:, done:count]
    hi, lo = np.max(chunk, axis=1), np.min(chunk, axis=1)
    if prev is None:
        return hi, lo
    return np.maximum(prev[0], hi), np.minimum(prev[1], lo)


def _update_norm(prev, knots, values, done, count):
    chunk = values[:, done:count]
    top = np.max(np.sum(chunk * chunk, axis=-1), axis=1)
    return top if prev is None else np.maximum(prev, top)


def _update_integral(prev, knots, values, done, count):
    acc = np.zeros(values[:, 0].shape) if prev is None else prev
    for k in range(max(done, 1), count):
        acc = acc + 0.5 * (knots[k] - knots[k - 1]) * (values[:, k - 1] + values[:, k])
    return acc


_UPDATES = {"extrema": _update_extrema, "norm": _update_norm, "integral": _update_integral}


class RunningStats:
    """Prefix statistics of one ensemble buffer, advanced lazily as knots arrive."""

    __slots__ = ("done", "value")

    def __init__(self):
        self.done = {}
        self.value = {}

    def get(self, what, knots, values, count):
        done = self.done.get(what, 0)
        if count < done:
            raise InvalidParameter("history statistics cannot move backwards")
        if count > done:
            self.value[what] = _UPDATES[what](self.value.get(what), knots, values, done, count)
            self.done[what] = count
        return self.value[what]


class History:
    """Read-only view of an ensemble of paths on ``[knots[0], knots[count-1]]``.

    The backing arrays may extend further (the solver preallocates them);
    nothing past ``count`` is reachable through this interface.
    """

    __slots__ = ("_knots", "_values", "_count", "_stats")

    def __init__(self, knots, values, count, stats=None):
        self._knots = knots
        self._values = values
        self._count = int(count)
        self._stats = stats if stats is not None else RunningStats()
        if not 1 <= self._count <= knots.size:
            raise InvalidParameter("history must expose at least one knot")

    @classmethod
    def from_path(cls, path: PiecewiseLinearPath) -> "History":
        return cls(path.knots, path.values[None, :, :], len(path))

    @property
    def t(self) -> float:
        """Current time: the right end of the visible window."""
        return float(self._knots[self._count - 1])

    @property
    def start(self) -> float:
        return float(self._knots[0])

    @property
    def n_paths(self) -> int:
        return self._values.shape[0]

    @property
    def dim(self) -> int:
        return self._values.shape[2]

    def knots(self) -> np.ndarray:
        out = self._knots[: self._count]
        out = out.view()
        out.flags.writeable = False
        return out

    def values(self) -> np.ndarray:
        out = self._values[:, : self._count].view()
        out.flags.writeable = False
        return out

    def now(self) -> np.ndarray:
        """``x(t)`` for every path, shape ``(M, d)``."""
        return self._values[:, self._count - 1]

    def at(self, s: float) -> np.ndarray:
        """``x(s)`` for ``start <= s <= t``, shape ``(M, d)``."""
        s = float(s)
        t = self.t
        if s > t:
            raise AnticipationError(f"functional at time {t} asked for the path at {s}")
        if s < self._knots[0]:
            raise OutOfDomain(f"time {s} precedes the history start {self._knots[0]}")
        if s == t:
            return self.now()
        knots = self._knots[: self._count]
        idx, w0, w1 = locate(knots, s)
        idx = int(idx)
        if knots.size == 1:
            return self._values[:, 0]
        return w0 * self._values[:, idx] + w1 * self._values[:, idx + 1]

    def _stat(self, what):
        return self._stats.get(what, self._knots, self._values, self._count)

    def running_max(self) -> np.ndarray:
        """Componentwise ``sup_{s <= t} x(s)``, shape ``(M, d)``."""
        return self._stat("extrema")[0]

    def running_min(self) -> np.ndarray:
        return self._stat("extrema")[1]

    def sup_norm_sq(self, a: float = 0.0) -> np.ndarray:
        """``sup_{s <= t} (a + |x(s)|^2)``, shape ``(M,)``."""
        return a + self._stat("norm")

    def integral(self) -> np.ndarray:
        """``int_{start}^{t} x(s) ds`` per path (trapezoid rule, exact on affine pieces)."""
        return self._stat("integral")


@dataclass(frozen=True)
class CoefficientFunctional:
    drift: Callable
    diffusion: Callable


@dataclass(frozen=True)
class Constants:
    """Constants of the growth, monotonicity and temporal-regularity conditions."""

    c: float = 1.0
    a: float = 1.0
    p: float = 2.0
    beta: float = 0.0
    eps: float = 0.5

    def __post_init__(self):
        if not self.c >= 1:
            raise InvalidParameter(f"c must be >= 1, got {self.c}")
        if not self.a >= 1:
            raise InvalidParameter(f"a must be >= 1, got {self.a}")
        if not self.p >= 2:
            raise InvalidParameter(f"p must be >= 2, got {self.p}")
        if not self.beta >= 0:
            raise InvalidParameter(f"beta must be >= 0, got {self.beta}")
        if not 0 < self.eps <= 1:
            raise InvalidParameter(f"eps must lie in (0, 1], got {self.eps}")


@dataclass(frozen=True)
class ProblemSpec:
    """One SFDE with deterministic initial segment ``xi`` on ``[-tau, 0]``.

    ``oracle``, if present, maps ``(times (K,), W (M, K, m))`` to the exact
    solution at those times, shape ``(M, K, d)``; ``W`` holds Brownian values
    (not increments) at ``times``.
    """

    name: str
    dim_state: int
    dim_noise: int
    horizon: float
    delay: float
    coefficients: CoefficientFunctional
    initial_segment: PiecewiseLinearPath
    constants: Constants = field(default_factory=Constants)
    oracle: Optional[Callable] = None
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.horizon > 0:
            raise InvalidParameter(f"horizon must be positive, got {self.horizon}")
        if not self.delay >= 0:
            raise InvalidParameter(f"delay must be >= 0, got {self.delay}")
        if self.dim_state < 1 or self.dim_noise < 1:
            raise InvalidParameter("dimensions must be positive")
        xi = self.initial_segment
        if xi.dim != self.dim_state:
            raise DimensionMismatch(f"initial segment has dim {xi.dim}, expected {self.dim_state}")
        if xi.domain != (-float(self.delay), 0.0):
            raise InvalidParameter(
                f"initial segment must live on [-{self.delay}, 0], got {xi.domain}"
            )

    @property
    def xi0(self) -> np.ndarray:
        return self.initial_segment.values[-1]

    def xi_sup_norm_sq(self) -> float:
        """``sup_{r in [-tau, 0]} |xi_r|^2``."""
        return self.initial_segment.sup_shifted_norm_sq(0.0)

    def log_xi_term(self, a: Optional[float] = None) -> float:
        """``log(a + sup |xi|^2)``, the initial-data factor of every moment bound."""
        a = self.constants.a if a is None else a
        return float(np.log(a + self.xi_sup_norm_sq()))

    def describe(self) -> dict:
        return {
            "name": self.name,
            "dim_state": self.dim_state,
            "dim_noise": self.dim_noise,
            "horizon": self.horizon,
            "delay": self.delay,
            "params": {k: self.params[k] for k in sorted(self.params)},
            "constants": {
                "c": self.constants.c,
                "a": self.constants.a,
                "p": self.constants.p,
                "beta": self.constants.beta,
                "eps": self.constants.eps,
            },
        }

    @property
    def problem_hash(self) -> str:
        blob = json.dumps(self.describe(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def _truncated_history(problem: ProblemSpec, t: float, path: PiecewiseLinearPath) -> History:
    t = float(t)
    if not 0 <= t <= problem.horizon:
        raise OutOfDomain(f"time {t} outside [0, {problem.horizon}]")
    lo, hi = path.domain
    if lo > -problem.delay or hi < t:
        raise OutOfDomain(f"path on {path.domain} does not cover [-{problem.delay}, {t}]")
    if path.dim != problem.dim_state:
        raise DimensionMismatch(f"path has dim {path.dim}, expected {problem.dim_state}")
    return History.from_path(path.restrict(-problem.delay, t))


def call_drift(problem: ProblemSpec, t: float, hist: History) -> np.ndarray:
    out = problem.coefficients.drift(t, hist)
    return np.broadcast_to(np.asarray(out, dtype=np.float64), (hist.n_paths, problem.dim_state))


def call_diffusion(problem: ProblemSpec, t: float, hist: History) -> np.ndarray:
    out = problem.coefficients.diffusion(t, hist)
    shape = (hist.n_paths, problem.dim_state, problem.dim_noise)
    return np.broadcast_to(np.asarray(out, dtype=np.float64), shape)


def eval_drift(problem: ProblemSpec, t: float, path: PiecewiseLinearPath) -> np.ndarray:
    """``mu(t, path)``, shape ``(d,)``; the functional only sees ``path`` on ``[-tau, t]``."""
    hist = _truncated_history(problem, t, path)
    return np.array(call_drift(problem, t, hist)[0])


def eval_diffusion(problem: ProblemSpec, t: float, path: PiecewiseLinearPath) -> np.ndarray:
    """``sigma(t, path)``, shape ``(d, m)``."""
    hist = _truncated_history(problem, t, path)
    return np.array(call_diffusion(problem, t, hist)[0])


# --------------------------------------------------------------------------
# Sampled assumption checks


@dataclass(frozen=True)
class Violation:
    condition: str
    t: float
    index: int
    lhs: float
    rhs: float

    @property
    def margin(self) -> float:
        return self.rhs - self.lhs


@dataclass
class ValidationReport:
    condition: str
    checked: int = 0
    violations: list = field(default_factory=list)
    worst_margin: float = float("inf")

    @property
    def ok(self) -> bool:
        return not self.violations

    def record(self, t, index, lhs, rhs, rtol=1e-12):
        self.checked += 1
        margin = rhs - lhs
        self.worst_margin = min(self.worst_margin, margin)
        if lhs > rhs + rtol * max(abs(rhs), 1.0):
            self.violations.append(Violation(self.condition, float(t), index, float(lhs), float(rhs)))

    def to_dict(self) -> dict:
        return {
            "condition": self.condition,
            "checked": self.checked,
            "ok": self.ok,
            "worst_margin": self.worst_margin,
            "violations": [
                {"t": v.t, "index": v.index, "lhs": v.lhs, "rhs": v.rhs, "margin": v.margin}
                for v in self.violations
            ],
        }


def validate_growth(problem: ProblemSpec, sample_paths, times) -> ValidationReport:
    """Check ``|mu| <= c sup(a+|x|^2)^(1/2)`` and ``|sigma|_F^2 <= c sup(a+|x|^2)``.

    The sup runs over ``[-tau, t]``. Both inequalities count as one condition
    ("growth"); a violation of either is recorded.
    """
    c, a = problem.constants.c, problem.constants.a
    report = ValidationReport("growth")
    for i, path in enumerate(sample_paths):
        for t in times:
            sup = path.sup_shifted_norm_sq(a, (-problem.delay, t))
            mu = eval_drift(problem, t, path)
            sig = eval_diffusion(problem, t, path)
            report.record(t, i, float(np.linalg.norm(mu)), c * np.sqrt(sup))
            report.record(t, i, float(np.sum(sig * sig)), c * sup)
    return report


def validate_monotonicity(problem: ProblemSpec, path_pairs, times) -> ValidationReport:
    """Check the one-sided condition

    ``2<mu(t,x1)-mu(t,x0), x1(t)-x0(t)> + (p-1)(1+eps)|sigma(t,x1)-sigma(t,x0)|_F^2
    <= c sup_{[-tau,T]} |x1-x0|^2``.
    """
    k = problem.constants
    report = ValidationReport("monotonicity")
    for i, (x1, x0) in enumerate(path_pairs):
        rhs = k.c * sup_norm_diff(x1, x0, (-problem.delay, problem.horizon)) ** 2
        for t in times:
            dmu = eval_drift(problem, t, x1) - eval_drift(problem, t, x0)
            dsig = eval_diffusion(problem, t, x1) - eval_diffusion(problem, t, x0)
            dx = x1.eval(t) - x0.eval(t)
            lhs = 2.0 * float(dmu @ dx) + (k.p - 1) * (1 + k.eps) * float(np.sum(dsig * dsig))
            report.record(t, i, lhs, rhs)
    return report


def validate_temporal(problem: ProblemSpec, sample_paths, time_pairs) -> ValidationReport:
    """Sampled temporal-regularity check for ``s < t``:

    ``max(|mu(t,x)-mu(s,x)|^2, |sigma(t,x)-sigma(s,x)|^2)
    <= c [ |t-s| + w_x(|t-s|; [0,t])^2 ] sup_{[-tau,t]} (a+|x|^2)^beta``
    with ``w_x`` the modulus of continuity.
    """
    k = problem.constants
    report = ValidationReport("temporal")
    for i, path in enumerate(sample_paths):
        for s, t in time_pairs:
            s, t = min(s, t), max(s, t)
            if s == t:
                continue
            dmu = eval_drift(problem, t, path) - eval_drift(problem, s, path)
            dsig = eval_diffusion(problem, t, path) - eval_diffusion(problem, s, path)
            lhs = max(float(dmu @ dmu), float(np.sum(dsig * dsig)))
            w = path.modulus(t - s, (0.0, t))
            weight = path.sup_shifted_norm_sq(k.a, (-problem.delay, t)) ** k.beta
            report.record(t, i, lhs, k.c * ((t - s) + w * w) * weight)
    return report


def random_paths(problem: ProblemSpec, count: int, seed: int, knots_per_unit: int = 32,
                 glue_initial: bool = False):
    """Seeded random piecewise-linear paths on ``[-tau, T]`` for the validators.

    Amplitudes are log-uniform over ``[0.1, 10]`` so that both small and large
    norms are exercised. With ``glue_initial`` the paths coincide with ``xi``
    on ``[-tau, 0]``, the only paths the Euler scheme ever presents.
    """
    rng = np.random.default_rng(seed)
    T, tau, d = problem.horizon, problem.delay, problem.dim_state
    n = max(2, int(np.ceil(knots_per_unit * (T + tau))))
    out = []
    for _ in range(count):
        scale = 10.0 ** rng.uniform(-1.0, 1.0)
        if glue_initial:
            xi = problem.initial_segment
            m = max(2, int(np.ceil(knots_per_unit * T)))
            tail_knots = np.linspace(0.0, T, m + 1)[1:]
            steps = rng.normal(scale=scale / np.sqrt(m), size=(m, d))
            tail = xi.values[-1] + np.cumsum(steps, axis=0)
            knots = np.concatenate((xi.knots, tail_knots))
            values = np.concatenate((xi.values, tail))
        else:
            knots = np.linspace(-tau, T, n + 1) if tau > 0 else np.linspace(0.0, T, n + 1)
            start = rng.normal(scale=scale, size=(1, d))
            steps = rng.normal(scale=scale / np.sqrt(n), size=(n, d))
            values = np.concatenate((start, start + np.cumsum(steps, axis=0)))
        out.append(PiecewiseLinearPath(knots, values))
    return out


# --------------------------------------------------------------------------
# Builtin problems
#
# Constants are derived by hand from the coefficient formulas; the comments
# on each factory give the bound for each condition. ``a = 1`` throughout.


def _constant_xi(value, tau, d=1):
    return PiecewiseLinearPath.constant(np.full(d, float(value)), -float(tau), 0.0)


def _point_delay(t, tau):
    return max(t - tau, -tau)


def _point_delay_linear(T=1.0, tau=0.5, xi=1.0, lam=-1.0, kappa=0.5, sigma=0.2, p=4.0, eps=0.5):
    # mu = lam x(t) + kappa x(t - tau), sigma = s x(t), xi constant.
    #   growth:       |mu| <= (|lam|+|kappa|) sup|x|,  sigma^2 <= s^2 sup x^2
    #   monotonicity: 2 max(lam,0) + 2|kappa| + (p-1)(1+eps) s^2
    #   temporal:     (|lam|+|kappa|)^2 with beta = 0 (delayed increments of a
    #                 path glued to constant xi stay inside [0, t])
    tau = float(tau)

    def drift(t, x):
        return lam * x.now() + kappa * x.at(_point_delay(t, tau))

    def diffusion(t, x):
        return (sigma * x.now())[:, :, None]

    c = max(1.0, abs(lam) + abs(kappa), sigma * sigma,
            2 * max(lam, 0.0) + 2 * abs(kappa) + (p - 1) * (1 + eps) * sigma * sigma,
            (abs(lam) + abs(kappa)) * (abs(lam) + abs(kappa)))
    return dict(horizon=T, delay=tau, coefficients=CoefficientFunctional(drift, diffusion),
                initial_segment=_constant_xi(xi, tau),
                constants=Constants(c=c, a=1.0, p=p, beta=0.0, eps=eps))


def _running_max_drift(T=1.0, tau=0.5, xi=1.0, lam=-1.0, kappa=0.25, sigma=0.2, p=4.0, eps=0.5):
    # mu = lam x(t) + kappa sup_{[-tau,t]} x, sigma = s x(t).
    #   |sup x1 - sup x0| <= sup|x1 - x0|, and for s < t the running max moves by
    #   at most the oscillation of x on [s, t]; constants as for the point delay.
    def drift(t, x):
        return lam * x.now() + kappa * x.running_max()

    def diffusion(t, x):
        return (sigma * x.now())[:, :, None]

    c = max(1.0, abs(lam) + abs(kappa), sigma * sigma,
            2 * max(lam, 0.0) + 2 * abs(kappa) + (p - 1) * (1 + eps) * sigma * sigma,
            (abs(lam) + abs(kappa)) * (abs(lam) + abs(kappa)))
    return dict(horizon=T, delay=float(tau), coefficients=CoefficientFunctional(drift, diffusion),
                initial_segment=_constant_xi(xi, tau),
                constants=Constants(c=c, a=1.0, p=p, beta=0.0, eps=eps))


def _distributed_delay(T=1.0, tau=0.5, xi=1.0, lam=-1.0, kappa=0.5, sigma=0.2, p=4.0, eps=0.5):
    # mu = lam x(t) + kappa int_{-tau}^{t} x(s) ds (constant kernel), sigma = s x(t).
    #   growth:       |lam| + |kappa| (T + tau)
    #   monotonicity: 2 max(lam,0) + 2|kappa|(T + tau) + (p-1)(1+eps) s^2
    #   temporal:     |int_s^t x| <= |t-s| sup|x| forces beta = 1;
    #                 |d mu|^2 <= 2 lam^2 w^2 + 2 kappa^2 T |t-s| sup(a+x^2)
    L = float(T) + float(tau)

    def drift(t, x):
        return lam * x.now() + kappa * x.integral()

    def diffusion(t, x):
        return (sigma * x.now())[:, :, None]

    c = max(1.0, abs(lam) + abs(kappa) * L, sigma * sigma,
            2 * max(lam, 0.0) + 2 * abs(kappa) * L + (p - 1) * (1 + eps) * sigma * sigma,
            2 * lam * lam, 2 * kappa * kappa * T)
    return dict(horizon=T, delay=float(tau), coefficients=CoefficientFunctional(drift, diffusion),
                initial_segment=_constant_xi(xi, tau),
                constants=Constants(c=c, a=1.0, p=p, beta=1.0, eps=eps))


def _gbm_oracle(T=1.0, mu=0.05, sigma=0.2, x0=1.0, p=4.0, eps=0.5):
    # dX = mu X dt + sigma X dW, no delay. c = max(1, |mu|, sigma^2,
    # 2 max(mu,0) + (p-1)(1+eps) sigma^2, mu^2).
    def drift(t, x):
        return mu * x.now()

    def diffusion(t, x):
        return (sigma * x.now())[:, :, None]

    def oracle(times, W):
        times = np.asarray(times, dtype=np.float64)
        return x0 * np.exp((mu - 0.5 * sigma**2) * times[None, :, None] + sigma * W)

    c = max(1.0, abs(mu), sigma * sigma, 2 * max(mu, 0.0) + (p - 1) * (1 + eps) * sigma * sigma, mu * mu)
    return dict(horizon=T, delay=0.0, coefficients=CoefficientFunctional(drift, diffusion),
                initial_segment=_constant_xi(x0, 0.0),
                constants=Constants(c=c, a=1.0, p=p, beta=0.0, eps=eps), oracle=oracle)


ORACLE_STEPS = 1 << 16


def _zero_noise_delay_ode(T=1.0, tau=0.5, xi=1.0, lam=-1.0, kappa=-1.0, p=4.0, eps=0.5):
    # x'(t) = lam x(t) + kappa x(t - tau); sigma = 0 with one (idle) noise channel.
    tau = float(tau)

    def drift(t, x):
        return lam * x.now() + kappa * x.at(_point_delay(t, tau))

    def diffusion(t, x):
        return np.zeros((x.n_paths, 1, 1))

    c = max(1.0, abs(lam) + abs(kappa), 2 * max(lam, 0.0) + 2 * abs(kappa), (abs(lam) + abs(kappa)) * (abs(lam) + abs(kappa)))
    kwargs = dict(horizon=T, delay=tau, coefficients=CoefficientFunctional(drift, diffusion),
                  initial_segment=_constant_xi(xi, tau),
                  constants=Constants(c=c, a=1.0, p=p, beta=0.0, eps=eps))
    cache = {}
    lock = threading.Lock()

    def oracle(times, W):
        # Deterministic Euler with ORACLE_STEPS steps, evaluated on its interpolant.
        with lock:
            if "path" not in cache:
                from .solver import deterministic_reference

                base = ProblemSpec(name="zero_noise_delay_ode", dim_state=1, dim_noise=1, **kwargs)
                cache["path"] = deterministic_reference(base, ORACLE_STEPS)
        path = cache["path"]
        vals = interpolate(path.knots, path.values, np.asarray(times, dtype=np.float64))
        return np.broadcast_to(vals, (W.shape[0],) + vals.shape)

    return dict(kwargs, oracle=oracle)


_BUILTINS = {
    "point_delay_linear": _point_delay_linear,
    "running_max_drift": _running_max_drift,
    "distributed_delay": _distributed_delay,
    "gbm_oracle": _gbm_oracle,
    "zero_noise_delay_ode": _zero_noise_delay_ode,
}


def builtin_names() -> list[str]:
    return sorted(_BUILTINS)


def builtin_defaults(name: str) -> dict:
    if name not in _BUILTINS:
        raise UnknownProblem(f"unknown problem {name!r}; choose from {builtin_names()}")
    sig = inspect.signature(_BUILTINS[name])
    return {k: v.default for k, v in sig.parameters.items()}


def builtin(name: str, **params) -> ProblemSpec:
    """Instantiate one of :func:`builtin_names` with keyword overrides of its defaults."""
    defaults = builtin_defaults(name)
    unknown = set(params) - set(defaults)
    if unknown:
        raise InvalidParameter(f"unknown parameters for {name}: {sorted(unknown)}")
    resolved = {**defaults, **{k: float(v) for k, v in params.items()}}
    return ProblemSpec(name=name, dim_state=1, dim_noise=1, params=resolved,
                       **_BUILTINS[name](**resolved))
