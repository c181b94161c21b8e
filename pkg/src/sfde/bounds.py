"""Closed-form a priori bounds, all returned as natural logarithms.

Constants such as ``exp(230 T p c)`` overflow doubles for modest parameters,
so every bound is assembled as a sum of logs. :func:`exp_if_representable`
converts back when the value fits in a float.

Initial data enter through ``log_xi = log(a + sup_{[-tau,0]} |xi|^2)``; with
a deterministic initial segment the expectations over ``xi`` in the moment,
increment and strong-error bounds collapse to plain powers of this term.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Optional

from .errors import InvalidParameter

_LOG_MAX = math.log(1.7976931348623157e308)


def exp_if_representable(log_value: float) -> Optional[float]:
    if math.isnan(log_value) or log_value >= _LOG_MAX:
        return None
    if log_value == -math.inf:
        return 0.0
    return math.exp(log_value)


def _log(x: float) -> float:
    return math.log(x) if x > 0 else -math.inf


def ceil_ratio(horizon: float, mesh: float) -> int:
    """``ceil(T / mesh)``, snapping to the nearest integer when within 1e-9 of it."""
    r = horizon / mesh
    near = round(r)
    if abs(r - near) <= 1e-9:
        return int(near)
    return int(math.ceil(r))


def ms_gronwall_log_bound(p: float, alpha_integral: float, log_expectation: float) -> float:
    """Log of ``E[sup H^p] / ((1-p) p^(1+p)) * exp(int alpha / ((1-p)^(1/p) p))``.

    Valid for ``p in (0, 1)``; ``log_expectation = log E[sup_{[0,t]} |H|^p]``.
    """
    if not 0 < p < 1:
        raise InvalidParameter(f"p must lie in (0, 1), got {p}")
    if not alpha_integral >= 0:
        raise InvalidParameter(f"int alpha must be >= 0, got {alpha_integral}")
    if log_expectation == -math.inf:
        return -math.inf
    prefactor = -(math.log1p(-p) + (1 + p) * math.log(p))
    rate = 1.0 / ((1 - p) ** (1 / p) * p)
    return log_expectation + prefactor + rate * alpha_integral


@dataclass(frozen=True)
class GronwallInputs:
    """Inputs of the moment bound for ``E[(sup_{[0,T]} V)^q]``.

    ``log_rhs_expectation`` is ``log E[(V(0,X_0)^p + int (beta^p lambda + gamma^p))^(q/p)]``.
    The exponent needs ``int_0^T (p alpha + (p-1)(lambda + 1)) ds``, hence the horizon.
    """

    p: float
    q: float
    horizon: float
    alpha_integral: float
    lambda_integral: float
    log_rhs_expectation: float

    def __post_init__(self):
        if not self.p >= 1:
            raise InvalidParameter(f"p must be >= 1, got {self.p}")
        if not 0 < self.q < self.p:
            raise InvalidParameter(f"need 0 < q < p, got q={self.q}, p={self.p}")
        for name in ("horizon", "alpha_integral", "lambda_integral"):
            if not getattr(self, name) >= 0:
                raise InvalidParameter(f"{name} must be >= 0")

    @classmethod
    def from_constants(cls, p, q, horizon, alpha, lam, beta=0.0, gamma=0.0, v0=0.0):
        """Constant-rate inputs with deterministic ``V(0, X_0) = v0``, ``beta``, ``gamma``."""
        log_inner = _logsumexp(p * _log(v0), _log(horizon) + _logsumexp(p * _log(beta) + _log(lam),
                                                                          p * _log(gamma)))
        return cls(p, q, horizon, alpha * horizon, lam * horizon, (q / p) * log_inner)

    @property
    def exponent_integral(self) -> float:
        return self.p * self.alpha_integral + (self.p - 1) * (self.lambda_integral + self.horizon)


def _logsumexp(x: float, y: float) -> float:
    if x == -math.inf:
        return y
    if y == -math.inf:
        return x
    m = max(x, y)
    return m + math.log(math.exp(x - m) + math.exp(y - m))


def _ratio_prefactor(r: float) -> tuple[float, float]:
    """For ``r = q/p``: ``(r (1-r)^(1/r), -log[r^(r+1) (1-r)])``."""
    denom = r * (1 - r) ** (1 / r)
    log_pref = -((r + 1) * math.log(r) + math.log1p(-r))
    return denom, log_pref


def gronwall_log_bound(inputs: GronwallInputs) -> float:
    """Log of the path-supremum Gronwall bound for ``0 < q < p``."""
    r = inputs.q / inputs.p
    denom, log_pref = _ratio_prefactor(r)
    if inputs.log_rhs_expectation == -math.inf:
        return -math.inf
    return inputs.log_rhs_expectation + inputs.exponent_integral / denom + log_pref


@dataclass(frozen=True)
class BoundParams:
    """Parameters shared by the moment, increment and strong-error bounds.

    ``log_xi`` is ``log(a + sup_{[-tau,0]} |xi|^2)``; ``mesh`` is the largest
    step of the partition and only the strong-error bound needs it.
    """

    q: float
    p: float
    T: float
    c: float
    a: float
    eps: float
    beta: float
    log_xi: float
    mesh: Optional[float] = None

    def __post_init__(self):
        if not self.p >= 2:
            raise InvalidParameter(f"p must be >= 2, got {self.p}")
        if not (self.c >= 1 and self.a >= 1):
            raise InvalidParameter(f"c and a must be >= 1, got c={self.c}, a={self.a}")
        if not 0 < self.eps <= 1:
            raise InvalidParameter(f"eps must lie in (0, 1], got {self.eps}")
        if not self.beta >= 0:
            raise InvalidParameter(f"beta must be >= 0, got {self.beta}")
        if not self.T >= 0:
            raise InvalidParameter(f"T must be >= 0, got {self.T}")
        if not self.log_xi >= math.log(self.a):
            raise InvalidParameter("log_xi must be >= log(a)")
        if self.mesh is not None and not 0 < self.mesh <= self.T:
            raise InvalidParameter(f"mesh must lie in (0, T], got {self.mesh}")

    @classmethod
    def for_problem(cls, problem, q: float, mesh: Optional[float] = None, **overrides):
        k = problem.constants
        fields = dict(q=q, p=k.p, T=problem.horizon, c=k.c, a=k.a, eps=k.eps, beta=k.beta,
                      log_xi=problem.log_xi_term(), mesh=mesh)
        fields.update(overrides)
        return cls(**fields)

    def replace(self, **changes) -> "BoundParams":
        return BoundParams(**{**asdict(self), **changes})

    def to_dict(self) -> dict:
        return asdict(self)


def _require_q_ge_2(params):
    if not params.q >= 2:
        raise InvalidParameter(f"q must be >= 2, got {params.q}")


def moment_log_bound(params: BoundParams) -> float:
    """``log[7 exp(38 T q^2 c) (a + sup|xi|^2)^(q/2)]``."""
    _require_q_ge_2(params)
    q = params.q
    return math.log(7.0) + 38.0 * params.T * q * q * params.c + 0.5 * q * params.log_xi


def increment_log_bound(params: BoundParams, du: float) -> float:
    """``log[7 c q exp(39 T q c) (a + sup|xi|^2)^(1/2) du^(1/2)]``: one window of length ``du``."""
    _require_q_ge_2(params)
    if not 0 <= du <= params.T:
        raise InvalidParameter(f"window length must lie in [0, T], got {du}")
    if du == 0:
        return -math.inf
    q, c = params.q, params.c
    return (math.log(7.0 * c * q) + 39.0 * params.T * q * c + 0.5 * params.log_xi
            + 0.5 * math.log(du))


def chained_modulus_log_bound(params: BoundParams, h: float) -> float:
    """``log[84 c q exp(39 T q c) (a + sup|xi|^2)^(1/2) h^(1/2) ceil(T/h)^(1/q)]``.

    Bounds the L^q norm of the modulus of continuity over all windows of
    length ``h`` in ``[0, T]``, obtained by chaining one-window bounds.
    """
    _require_q_ge_2(params)
    if not 0 < h <= params.T:
        raise InvalidParameter(f"window length must lie in (0, T], got {h}")
    q, c = params.q, params.c
    return (math.log(84.0 * c * q) + 39.0 * params.T * q * c + 0.5 * params.log_xi
            + 0.5 * math.log(h) + math.log(ceil_ratio(params.T, h)) / q)


def strong_error_log_bound(params: BoundParams) -> float:
    """Log of the bound on ``E[(sup_{[0,T]} |X^1 - X^0|^2)^(q/2)]`` for ``1 <= q < p``."""
    q, p, T, c, eps, beta = params.q, params.p, params.T, params.c, params.eps, params.beta
    if not 1 <= q < p:
        raise InvalidParameter(f"need 1 <= q < p, got q={q}, p={p}")
    if params.mesh is None:
        raise InvalidParameter("strong_error_log_bound needs the mesh")
    if not T > 0:
        raise InvalidParameter("T must be positive")
    mesh = params.mesh
    r = q / p
    denom, log_pref = _ratio_prefactor(r)
    growth = c + eps + (eps * p - eps + p) / eps * c
    inner = (math.log(growth) + math.log(202300.0) + 2 * math.log(c) + 2 * math.log(p)
             + 230.0 * T * p * c * max(beta * beta, 1.0)
             + math.log(mesh) + math.log(ceil_ratio(T, mesh)) / p)
    return (T * p * (c + eps) / denom + log_pref + r * math.log(T)
            + q * max(beta, 1.0) * params.log_xi + 0.5 * q * inner)


BOUND_NAMES = ("ms_gronwall", "gronwall", "moment", "increment", "strong_error")
