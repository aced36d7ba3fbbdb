"""Fast gradient method on a simple set, exact or with a (delta, L)-oracle."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .exceptions import ContractViolation
from .model import InexactOracleOutput, as_vector

__all__ = ["gradient_mapping", "alpha_start", "alpha_next", "fgm_run", "fgm_restarted_inexact",
           "FgmResult", "inexact_bound", "restart_plan"]


def gradient_mapping(qset, f_at, g_at, x_hat, gamma):
    """``(x_Q, g_Q)`` with ``x_Q`` the prox-linear minimizer and ``g_Q = gamma (x_hat - x_Q)``.

    ``f_at`` only shifts the model and does not affect the result.
    """
    x_q = qset.prox_linear_argmin(g_at, x_hat, gamma)
    return x_q, gamma * (np.asarray(x_hat, float) - x_q)


def alpha_start(q):
    """Positive root of ``a^2 = (1 - a) + q a``."""
    return 0.5 * (-(1.0 - q) + math.sqrt((1.0 - q) ** 2 + 4.0))


def alpha_next(alpha, q):
    """Root in ``(0, 1)`` of ``a^2 = (1 - a) alpha^2 + q a``."""
    c = alpha * alpha - q
    return 0.5 * (-c + math.sqrt(c * c + 4.0 * alpha * alpha))


def inexact_bound(L, R, k, delta):
    """``2 L R^2 / (k + 1)^2 + (k + 3) delta / 3``."""
    return 2.0 * L * R * R / (k + 1) ** 2 + (k + 3) * delta / 3.0


@dataclass
class FgmResult:
    x: np.ndarray
    iterations: int
    iterates: list = field(default_factory=list, repr=False)
    stages_planned: int = 0
    stages_run: int = 0
    stage_log: list = field(default_factory=list, repr=False)
    oracle_calls: int = 0


def _query(oracle, x):
    out = oracle(x)
    if isinstance(out, InexactOracleOutput):
        return out.f_delta, out.g_delta, out.delta
    f, g = out
    return float(f), np.asarray(g, float), 0.0


def fgm_run(qset, oracle, x0, L, mu=0.0, N=100, *, keep_iterates=False, callback=None,
            trace=None, stage=0, full_output=False):
    """Constant-step fast gradient method with ``q = mu / L``.

    Parameters
    ----------
    qset : SimpleSet
    oracle : callable
        ``x -> (f, g)`` or ``x -> InexactOracleOutput``.
    x0 : array_like
        Feasible start.
    L, mu : float
        Smoothness and strong convexity (``mu = 0`` gives the convex scheme).
    N : int
        Number of gradient steps.
    keep_iterates : bool
        Store ``x_0, ..., x_N`` in the result.
    callback : callable, optional
        Called as ``callback(k, x_k)`` after every step.
    """
    x0 = as_vector(x0, qset.dim, "x0")
    if not qset.contains(x0, 1e-9):
        raise ContractViolation("x0 must be feasible")
    if not (L > 0 and 0 <= mu <= L):
        raise ContractViolation("need L > 0 and 0 <= mu <= L")
    N = int(N)
    if N < 0:
        raise ContractViolation("N must be nonnegative")
    q = mu / L
    x = qset.project(x0)
    y = x.copy()
    alpha = alpha_start(q)
    iterates = [x.copy()] if keep_iterates else []
    for i in range(N):
        f, g, delta = _query(oracle, y)
        x_new, g_q = gradient_mapping(qset, f, g, y, L)
        a_new = alpha_next(alpha, q)
        beta = alpha * (1.0 - alpha) / (alpha * alpha + a_new)
        y = x_new + beta * (x_new - x)
        x, alpha = x_new, a_new
        if keep_iterates:
            iterates.append(x.copy())
        if callback is not None:
            callback(i + 1, x)
        if trace is not None:
            trace.append({"method": "fgm", "stage": stage, "iter": i + 1, "f": f,
                          "gq_norm": float(np.linalg.norm(g_q)), "delta": delta})
    if full_output:
        return FgmResult(x=x, iterations=N, iterates=iterates, oracle_calls=N)
    return x


def restart_plan(L, mu, eps, R):
    """Stage length, stage count, radii and per-stage accuracies of the restarted method."""
    if not (mu > 0 and eps > 0 and R > 0 and L >= mu):
        raise ContractViolation("need L >= mu > 0, eps > 0, R > 0")
    N1 = math.ceil(math.sqrt(10.0 * L / mu))
    k = max(0, math.ceil(math.log2(mu * R * R / eps)))
    radii = R / np.sqrt(2.0) ** np.arange(k)
    deltas = L * radii**2 / (N1 * N1 * (N1 + 3))
    return N1, k, radii, deltas


def fgm_restarted_inexact(qset, provider, x0, L, mu, eps, R, *, trace=None, full_output=False):
    """Restarted fast gradient method with per-stage oracle accuracy.

    Every stage runs the convex scheme (``q = 0``) for ``N1 = ceil(sqrt(10 L / mu))``
    steps with an oracle ``provider(delta_i)``, ``delta_i = L R_i^2 / (N1^2 (N1 + 3))``,
    after which ``R_{i+1}^2 = R_i^2 / 2``.  There are ``ceil(log2(mu R^2 / eps))`` stages.
    """
    x0 = as_vector(x0, qset.dim, "x0")
    N1, k, radii, deltas = restart_plan(L, mu, eps, R)
    x = qset.project(x0)
    out = FgmResult(x=x, iterations=0, stages_planned=k)
    for i in range(k):
        oracle = provider(float(deltas[i]))
        x = fgm_run(qset, oracle, x, L, 0.0, N1, trace=trace, stage=i)
        out.iterations += N1
        out.oracle_calls += N1
        out.stages_run = i + 1
        out.stage_log.append({"stage": i, "R": float(radii[i]), "delta": float(deltas[i]),
                              "x": x.copy()})
    out.x = x
    return out if full_output else x
