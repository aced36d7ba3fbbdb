"""Oracles, prox functions, Bregman divergences and the third-order Taylor model.

Derivative tensors of order three are never formed.  The model works with
the directional quantity ``D^3 f(y)[h, h]`` either through the symmetric
gradient difference :func:`third_directional_fd` or through an analytic
closure supplied by a test problem.
"""
from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .exceptions import ContractViolation

__all__ = [
    "SmoothnessSpec",
    "FirstOrderOracle",
    "SecondOrderOracle",
    "InexactOracleOutput",
    "TensorStepModel",
    "as_vector",
    "prox_power",
    "bregman_divergence",
    "third_directional_fd",
    "model_gradient",
    "check_delta_L_oracle",
]


def as_vector(x, dim=None, name="x"):
    """Return ``x`` as a finite 1-D float64 array, checking ``dim`` if given."""
    v = np.asarray(x, dtype=float)
    if v.ndim != 1 or v.size == 0:
        raise ContractViolation(f"{name} must be a non-empty 1-D vector, got shape {v.shape}")
    if dim is not None and v.size != dim:
        raise ContractViolation(f"{name} has dimension {v.size}, expected {dim}")
    if not np.all(np.isfinite(v)):
        raise ContractViolation(f"{name} contains non-finite entries")
    return v


@dataclass(frozen=True)
class SmoothnessSpec:
    """Constants describing ``F(x, y)``.

    ``mu_x`` is the strong-convexity modulus of the outer function
    ``f(x) = min_y F(x, y)``, ``L_p_y`` the Lipschitz constant of the
    ``p``-th derivative in ``y``.
    """

    mu_x: float
    mu_y: float
    L_y: float
    L_p_y: float
    L_xy: float
    p: int = 3

    def __post_init__(self):
        for name in ("mu_x", "mu_y", "L_y", "L_p_y", "L_xy"):
            if not getattr(self, name) >= 0:
                raise ContractViolation(f"{name} must be nonnegative")
        if not self.mu_y > 0:
            raise ContractViolation("mu_y must be positive")
        if self.mu_y > self.L_y * (1 + 1e-12):
            raise ContractViolation("mu_y cannot exceed L_y")
        if self.p not in (2, 3):
            raise ContractViolation("only p in {2, 3} is supported")


class FirstOrderOracle:
    """Wraps ``fun_and_grad(x) -> (f(x), grad f(x))`` and counts calls.

    Counters are guarded by a lock so a problem definition can be shared
    between threads; a single solver run uses it sequentially.
    """

    def __init__(self, fun_and_grad: Callable, dim: int | None = None):
        self._fun_and_grad = fun_and_grad
        self.dim = dim
        self._lock = threading.Lock()
        self.grad_calls = 0

    def _bump(self, attr):
        with self._lock:
            setattr(self, attr, getattr(self, attr) + 1)

    def __call__(self, x):
        x = as_vector(x, self.dim)
        self._bump("grad_calls")
        value, grad = self._fun_and_grad(x)
        grad = np.asarray(grad, dtype=float)
        if grad.shape != x.shape:
            raise ContractViolation(
                f"gradient has shape {grad.shape}, expected {x.shape}")
        return float(value), grad

    evaluate = __call__

    def value(self, x):
        return self(x)[0]

    def counts(self):
        return {"grad_calls": self.grad_calls}


class SecondOrderOracle(FirstOrderOracle):
    """First-order oracle plus a separately counted Hessian."""

    def __init__(self, fun_and_grad: Callable, hess: Callable, dim: int | None = None):
        super().__init__(fun_and_grad, dim)
        self._hess = hess
        self.hess_calls = 0

    def hessian(self, x):
        x = as_vector(x, self.dim)
        self._bump("hess_calls")
        H = np.asarray(self._hess(x), dtype=float)
        if H.shape != (x.size, x.size):
            raise ContractViolation(f"Hessian has shape {H.shape}")
        scale = max(1.0, float(np.max(np.abs(H))))
        if np.max(np.abs(H - H.T)) > 1e-12 * scale:
            raise ContractViolation("Hessian is not symmetric")
        return 0.5 * (H + H.T)

    def counts(self):
        return {"grad_calls": self.grad_calls, "hess_calls": self.hess_calls}


@dataclass
class InexactOracleOutput:
    """A ``(delta, L)``-oracle answer ``(f_delta, g_delta)`` at one point."""

    f_delta: float
    g_delta: np.ndarray
    delta: float
    L: float

    def __post_init__(self):
        self.g_delta = as_vector(self.g_delta, name="g_delta")
        if not self.delta >= 0:
            raise ContractViolation("delta must be nonnegative")
        if not self.L > 0:
            raise ContractViolation("L must be positive")

    def __iter__(self):
        # lets an output be unpacked as ``f, g = out``
        yield self.f_delta
        yield self.g_delta


def prox_power(p, x):
    """Value and gradient of ``d_p(x) = ||x||^p / p``.

    >>> prox_power(4, np.array([1.0, 1.0]))
    (1.0, array([2., 2.]))
    """
    if p < 2:
        raise ContractViolation("prox_power needs p >= 2")
    x = np.asarray(x, dtype=float)
    r = float(np.linalg.norm(x))
    return r**p / p, r ** (p - 2) * x


def bregman_divergence(rho, x, y):
    """``rho(y) - rho(x) - <grad rho(x), y - x>``.

    ``rho`` is a callable returning ``(value, gradient)``.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape:
        raise ContractViolation(f"dimension mismatch: {x.shape} vs {y.shape}")
    rx, gx = rho(x)
    ry, _ = rho(y)
    return float(ry - rx - np.dot(gx, y - x))


def third_directional_fd(oracle, anchor, y, tau, anchor_grad=None):
    """Second-order gradient difference approximating ``D^3 f(anchor)[h, h]``.

    With ``h = y - anchor`` this returns
    ``(grad f(anchor + tau h) + grad f(anchor - tau h) - 2 grad f(anchor)) / tau^2``.
    Three gradient calls, or two when ``anchor_grad`` is supplied.  The
    difference is exact when the gradient is a cubic polynomial.
    """
    if not tau > 0:
        raise ContractViolation("tau must be positive")
    anchor = np.asarray(anchor, dtype=float)
    h = np.asarray(y, dtype=float) - anchor
    if anchor_grad is None:
        _, anchor_grad = oracle(anchor)
    _, gp = oracle(anchor + tau * h)
    _, gm = oracle(anchor - tau * h)
    return (gp + gm - 2.0 * anchor_grad) / tau**2


@dataclass
class TensorStepModel:
    """Regularized third-order Taylor model around ``anchor``.

    ``value``/``grad``/``hess`` are the oracle data at the anchor, fetched
    once by :meth:`build`.  The regularizer is ``H / (p + 1)! ||y - anchor||^(p+1)``.
    """

    anchor: np.ndarray
    H: float
    value: float
    grad: np.ndarray
    hess: np.ndarray
    p: int = 3
    _eig: tuple | None = field(default=None, repr=False)

    def __post_init__(self):
        if not self.H > 0:
            raise ContractViolation("regularization H must be positive")

    @classmethod
    def build(cls, oracle, anchor, H, p=3, value=None, grad=None):
        anchor = as_vector(anchor)
        if grad is None:
            value, grad = oracle(anchor)
        return cls(anchor=anchor, H=float(H), value=float(value), grad=np.asarray(grad, float),
                   hess=oracle.hessian(anchor), p=p)

    @property
    def reg_coef(self):
        """Coefficient ``c`` with regularizer gradient ``c ||h||^(p-1) h``."""
        return self.H / math.factorial(self.p)

    def eig(self):
        if self._eig is None:
            w, V = np.linalg.eigh(self.hess)
            self._eig = (w, V)
        return self._eig

    def exact_value(self, y, third):
        """Model value given ``third(h) = D^3 f(anchor)[h, h]`` (vector)."""
        h = np.asarray(y, float) - self.anchor
        t3 = float(np.dot(third(h), h))
        r = np.linalg.norm(h)
        return (self.value + self.grad @ h + 0.5 * h @ self.hess @ h + t3 / 6.0
                + self.H / math.factorial(self.p + 1) * r ** (self.p + 1))

    def exact_gradient(self, y, third):
        h = np.asarray(y, float) - self.anchor
        r = np.linalg.norm(h)
        return (self.grad + self.hess @ h + 0.5 * third(h)
                + self.reg_coef * r ** (self.p - 1) * h)


def model_gradient(model, oracle, y, tau):
    """Gradient of the model with the third-order term replaced by its difference surrogate.

    Costs two gradient calls (the anchor gradient is cached in ``model``).
    """
    if model.p != 3:
        raise ContractViolation("the surrogate model gradient is defined for p = 3")
    y = np.asarray(y, dtype=float)
    h = y - model.anchor
    if not np.any(h):
        return model.grad.copy()
    g_tau = third_directional_fd(oracle, model.anchor, y, tau, anchor_grad=model.grad)
    r2 = float(h @ h)
    return model.grad + model.hess @ h + 0.5 * g_tau + model.reg_coef * r2 * h


def check_delta_L_oracle(exact, candidate, x, probes: Sequence, atol=0.0, rtol=1e-12):
    """Check the two-sided ``(delta, L)`` inequality at every probe point.

    ``0 <= f(x') - f_delta - <g_delta, x' - x> <= L/2 ||x' - x||^2 + delta``.
    ``exact`` is either an oracle or a plain callable returning ``f(x')``.
    A slack of ``atol + rtol * max(1, |f|)`` absorbs rounding in the values.
    """
    x = np.asarray(x, dtype=float)

    def fval(z):
        out = exact(z)
        return float(out[0]) if isinstance(out, tuple) else float(out)

    for xp in probes:
        xp = np.asarray(xp, dtype=float)
        fp = fval(xp)
        d = xp - x
        gap = fp - candidate.f_delta - float(np.dot(candidate.g_delta, d))
        slack = atol + rtol * max(1.0, abs(fp), abs(candidate.f_delta))
        upper = 0.5 * candidate.L * float(d @ d) + candidate.delta
        if gap < -slack or gap > upper + slack:
            return False
    return True
