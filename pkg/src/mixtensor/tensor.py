"""Accelerated tensor methods.

``atmi3_run``/``atmi3_restarted`` minimize a smooth convex function on the
whole space with a third-order method that only touches gradients and
Hessians.  ``necg_solve``/``bilevel_run``/``bilevel_restarted`` handle a
simple feasible set through a composite formulation.

Both accelerated loops keep the estimating sequence implicitly: only the
accumulated linear coefficient ``s`` matters for its minimizer.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .bdgm import BdgmConfig, bdgm_solve
from .exceptions import ContractViolation, ConvergenceFailure
from .model import as_vector
from .secular import minimize_power_regularized
from .sets import Box, EuclideanBall, SimpleSet, WholeSpace

__all__ = [
    "atmi_coefficients",
    "atmi3_run",
    "atmi3_restarted",
    "restart_radii",
    "CompositeObjective",
    "necg_solve",
    "bilevel_coefficients",
    "bilevel_run",
    "bilevel_restarted",
    "bilevel_rate_constant",
    "TensorResult",
]

_EPS = np.finfo(float).eps


@dataclass
class TensorResult:
    """Output of the tensor solvers when ``full_output=True``."""

    y: np.ndarray
    value: float
    grad: np.ndarray
    iterations: int
    certified: bool = False
    stages_planned: int = 0
    stages_run: int = 0
    stage_log: list = field(default_factory=list)
    inner_iterations: int = 0
    residual: float = float("nan")


def _emit(trace, **row):
    if trace is not None:
        trace.append(row)


def _counts(oracle):
    return oracle.grad_calls, getattr(oracle, "hess_calls", 0)


def atmi_coefficients(L3, N):
    """``A_0..A_N`` of the accelerated third-order method."""
    c3 = (5.0 / (7.0 * L3)) ** (1.0 / 3.0)
    i = np.arange(N + 1, dtype=float)
    return 2.0 * (2.0 * c3 / 3.0) ** 3 * (i / 4.0) ** 4


def atmi3_run(oracle, y0, L3, N, *, eps=None, mu=None, certify=True, bdgm_config=None,
              value0=None, grad0=None, trace=None, stage=0, full_output=False):
    """Accelerated third-order method with inexact BDGM steps.

    Parameters
    ----------
    oracle : SecondOrderOracle
    y0 : array_like
    L3 : float
        Lipschitz constant of the third derivative.
    N : int
        Number of iterations.
    eps : float, optional
        Target gap.  Sets the BDGM accuracy and, together with ``mu``, the
        early exit ``||grad f||^2 / (2 mu) <= eps``.
    mu : float, optional
        Strong convexity modulus, only used for the early exit.
    certify : bool
        Allow the early exit.
    value0, grad0 : optional
        Oracle data at ``y0``; saves one gradient call.

    Returns
    -------
    y : ndarray or TensorResult
    """
    y0 = as_vector(y0, oracle.dim, "y0")
    if not L3 > 0:
        raise ContractViolation("L3 must be positive")
    N = int(N)
    if N < 0:
        raise ContractViolation("N must be nonnegative")
    cfg = bdgm_config or BdgmConfig()
    can_stop = certify and eps is not None and mu is not None and mu > 0
    space = WholeSpace(y0.size)
    A = atmi_coefficients(L3, N)

    y, fy, gy = y0.copy(), None, None
    s = np.zeros_like(y0)
    certified, inner, it = False, 0, 0
    for i in range(N):
        v = space.power_prox_argmin(s, y0, 3)
        a = A[i + 1] - A[i]
        z = (A[i] / A[i + 1]) * y + (a / A[i + 1]) * v
        if i == 0 and grad0 is not None:
            fz, gz = float(value0), np.asarray(grad0, float)
        else:
            fz, gz = oracle(z)
        if can_stop and gz @ gz <= 2.0 * mu * eps:
            y, fy, gy, certified = z, fz, gz, True
            break
        res = bdgm_solve(oracle, z, L3, eps=eps, config=cfg, value=fz, grad=gz,
                         full_output=True)
        inner += res.iterations
        y, fy, gy = res.z, res.value, res.grad
        s += a * gy
        it = i + 1
        g_calls, h_calls = _counts(oracle)
        _emit(trace, method="atmi3", stage=stage, iter=it, f=fy, grad_calls=g_calls,
              hess_calls=h_calls, delta=res.delta, residual=res.residual)
        if can_stop and gy @ gy <= 2.0 * mu * eps:
            certified = True
            break
    if not full_output:
        return y
    if fy is None:
        fy, gy = (value0, grad0) if grad0 is not None else oracle(y)
    return TensorResult(y=y, value=fy, grad=gy, iterations=it, certified=certified,
                        inner_iterations=inner, residual=float(np.linalg.norm(gy)))


def restart_radii(R, k, schedule="halving"):
    """Stage radii.  ``halving``: ``R / 2^i``; ``sqrt2``: ``R / 2^(i/2)``."""
    i = np.arange(k + 1, dtype=float)
    if schedule == "halving":
        return R / 2.0**i
    if schedule == "sqrt2":
        return R / 2.0 ** (i / 2.0)
    raise ContractViolation(f"unknown restart schedule {schedule!r}")


def _stage_count(mu, R, eps):
    if not eps > 0:
        raise ContractViolation("eps must be positive")
    if not mu > 0:
        raise ContractViolation("mu must be positive")
    if not R > 0:
        raise ContractViolation("R must be positive")
    return max(0, math.ceil(math.log2(mu * R * R / eps)))


def atmi3_restarted(oracle, y0, L3, mu, eps, R, *, schedule="halving", certify=True,
                    bdgm_config=None, value0=None, grad0=None, trace=None, full_output=False):
    """Restarted accelerated third-order method for a ``mu``-strongly convex ``f``.

    Runs ``ceil(log2(mu R^2 / eps))`` stages; stage ``i`` uses radius
    ``R_i`` and ``N_i = 6 ceil((7 L3 R_i^2 / (15 mu))^(1/4))`` iterations.
    With ``certify`` a stage ends once ``||grad f||^2/(2 mu)`` falls below
    the gap the next stage assumes, and the run ends once it falls below ``eps``.
    """
    y0 = as_vector(y0, oracle.dim, "y0")
    k = _stage_count(mu, R, eps)
    radii = restart_radii(R, k, schedule)

    def stage(i, y, fy, gy, stage_eps):
        N_i = 6 * math.ceil((7.0 * L3 * radii[i] ** 2 / (15.0 * mu)) ** 0.25)
        res = atmi3_run(oracle, y, L3, N_i, eps=stage_eps, mu=mu, certify=certify,
                        bdgm_config=bdgm_config, value0=fy, grad0=gy, trace=trace, stage=i,
                        full_output=True)
        return N_i, res

    return _restart_loop(oracle, y0, mu, eps, radii, k, certify, stage, full_output,
                         residual=lambda y, g: float(np.linalg.norm(g)), start=(value0, grad0))


def _restart_loop(oracle, y0, mu, eps, radii, k, certify, stage, full_output, residual,
                  start=(None, None)):
    """Shared stage loop; ``stage`` runs one stage and returns ``(N_i, result)``."""
    y = y0.copy()
    out = TensorResult(y=y, value=np.nan, grad=np.zeros_like(y), iterations=0,
                       stages_planned=k)
    fy, gy = start
    if gy is not None:
        fy, gy = float(fy), as_vector(gy, y.size, "grad0")
    elif certify or full_output:
        fy, gy = oracle(y)
    res_norm = residual(y, gy) if gy is not None else np.inf
    for i in range(k):
        stage_eps = eps if i == k - 1 else max(eps, 0.5 * mu * radii[i + 1] ** 2)
        if certify and res_norm**2 <= 2.0 * mu * stage_eps:
            # the stage target already holds; nothing to run
            N_i, it = 0, 0
        else:
            N_i, res = stage(i, y, fy, gy, stage_eps)
            y, fy, gy, it = res.y, res.value, res.grad, res.iterations
            res_norm = res.residual
            out.iterations += it
            out.inner_iterations += res.inner_iterations
        out.stages_run = i + 1
        out.stage_log.append({"stage": i, "R": float(radii[i]), "N": N_i, "y": y.copy(),
                              "iterations": it, "value": fy})
        if certify and res_norm**2 <= 2.0 * mu * eps:
            out.certified = True
            break
    out.y = y
    if not full_output:
        return y
    if gy is None:
        fy, gy = oracle(y)
        res_norm = residual(y, gy)
    out.value, out.grad, out.residual = fy, gy, res_norm
    return out


class CompositeObjective:
    """``Phi = f + indicator(domain)`` with ``f`` having an ``L_p``-Lipschitz ``p``-th derivative.

    ``H`` defaults to ``6 / (p - 1)! * L_p`` and must be at least ``p * L_p``.
    """

    def __init__(self, oracle, domain: SimpleSet, p=3, Lp=1.0, H=None):
        if p not in (2, 3):
            raise ContractViolation("p must be 2 or 3")
        if not Lp > 0:
            raise ContractViolation("Lp must be positive")
        self.oracle = oracle
        self.domain = domain
        self.p = int(p)
        self.Lp = float(Lp)
        self.H = 6.0 / math.factorial(p - 1) * Lp if H is None else float(H)
        if self.H < p * Lp * (1 - 1e-12):
            raise ContractViolation("H must be at least p * Lp")
        if oracle.dim is not None and oracle.dim != domain.dim:
            raise ContractViolation("oracle and domain dimensions differ")

    @property
    def dim(self):
        return self.domain.dim


@dataclass
class NecgResult:
    T: np.ndarray
    g: np.ndarray
    value: float
    grad: np.ndarray
    iterations: int
    Lrel: float
    residual: float
    target: float


def _box_step(lo, hi, lam, V, b, c, q):
    M = V @ (lam[:, None] * V.T)

    def fun(h):
        r = float(np.linalg.norm(h))
        Mh = M @ h
        return (-b @ h + 0.5 * h @ Mh + c / (q + 1) * r ** (q + 1),
                -b + Mh + c * r ** (q - 1) * h)

    h0 = np.clip(np.zeros_like(b), lo, hi)
    res = minimize(fun, h0, jac=True, method="L-BFGS-B", bounds=list(zip(lo, hi)),
                   options={"ftol": 1e-16, "gtol": 1e-13, "maxiter": 2000})
    return np.clip(res.x, lo, hi)


def necg_solve(comp, anchor, gamma=None, Lrel=2.0, *, max_iters=500, grad=None, value=None,
               full_output=False):
    """Non-Euclidean composite gradient method for the regularized prox step.

    Iterates ``z+ = argmin <grad f^p(z), u - z> + 2 L beta_rho(z, u)`` over the
    domain, with ``f^p = f + H d_{p+1}(. - anchor)`` and
    ``rho = 1/2 <A h, h> + H d_{p+1}(h)``, ``A`` the Hessian at the anchor.
    ``L`` doubles whenever the relative-smoothness descent test fails.

    Returns
    -------
    (T, g) or NecgResult
        ``g`` is a normal-cone element at ``T`` with
        ``||grad f^p(T) + g|| <= gamma ||grad f(T) + g||``.
    """
    oracle, dom, p, H = comp.oracle, comp.domain, comp.p, comp.H
    gamma = 1.0 / p if gamma is None else float(gamma)
    if not 0.0 <= gamma <= 1.0 / p + 1e-15:
        raise ContractViolation("gamma must lie in [0, 1/p]")
    if not Lrel > 0:
        raise ContractViolation("Lrel must be positive")
    y_hat = as_vector(anchor, dom.dim, "anchor")
    if not dom.contains(y_hat, 1e-9):
        raise ContractViolation("anchor must be feasible")
    y_hat = dom.project(y_hat)
    if grad is None:
        value, grad = oracle(y_hat)
    A = oracle.hessian(y_hat)
    w, V = np.linalg.eigh(A)
    w = np.maximum(w, 0.0)

    def pieces(z, fz, gz):
        h = z - y_hat
        r = float(np.linalg.norm(h))
        reg = r ** (p - 1) * h
        fp = fz + H * r ** (p + 1) / (p + 1)
        gp = gz + H * reg
        rho = 0.5 * float((V.T @ h) @ (w * (V.T @ h))) + H * r ** (p + 1) / (p + 1)
        grho = V @ (w * (V.T @ h)) + H * reg
        return fp, gp, rho, grho

    g_scale = float(np.linalg.norm(grad)) + float(w[-1]) * float(np.linalg.norm(y_hat)) + 1e-300
    floor = 64.0 * _EPS * g_scale

    z, fz, gz = y_hat, float(value), np.asarray(grad, float)
    g = dom.min_norm_normal(z, gz)
    fp, gp, rho, grho = pieces(z, fz, gz)
    L = float(Lrel)
    res = float(np.linalg.norm(gz + g))
    tgt = gamma * res
    it = 0
    if res <= floor:
        out = NecgResult(z, g, fz, gz, 0, L, res, tgt)
        return out if full_output else (z, g)

    if isinstance(dom, EuclideanBall):
        offset, radius = dom.center - y_hat, dom.radius
    else:
        offset, radius = None, np.inf

    while it < max_iters:
        it += 1
        while True:
            b = 2.0 * L * grho - gp
            if isinstance(dom, Box):
                h = _box_step(dom.lower - y_hat, dom.upper - y_hat, 2 * L * w, V, b, 2 * L * H, p)
            else:
                h, _ = minimize_power_regularized(2.0 * L * w, V, b, 2.0 * L * H, p,
                                                  offset=offset, radius=radius)
            z_new = dom.project(y_hat + h)
            f_new, g_new = oracle(z_new)
            fp_new, gp_new, rho_new, grho_new = pieces(z_new, f_new, g_new)
            breg = rho_new - rho - float(grho @ (z_new - z))
            slack = 64.0 * _EPS * max(1.0, abs(fp), abs(fp_new))
            if fp_new <= fp + float(gp @ (z_new - z)) + 2.0 * L * breg + slack:
                break
            L *= 2.0
            if L > 1e12:
                raise ConvergenceFailure("NECG backtracking diverged", Lrel=L, iterations=it)
        if isinstance(dom, WholeSpace):
            g = np.zeros_like(z_new)
        else:
            g = 2.0 * L * (grho - grho_new) - gp
        z, fz, gz = z_new, f_new, g_new
        fp, gp, rho, grho = fp_new, gp_new, rho_new, grho_new
        res = float(np.linalg.norm(gp + g))
        tgt = gamma * float(np.linalg.norm(gz + g))
        if res <= tgt or res <= floor:
            out = NecgResult(z, g, fz, gz, it, L, res, tgt)
            return out if full_output else (z, g)
    raise ConvergenceFailure("NECG iteration budget exhausted", residual=res, target=tgt,
                             iterations=it, Lrel=L)


def bilevel_coefficients(H, p, gamma, N):
    """``A_0..A_N`` of the bi-level method."""
    cp = ((1.0 - gamma) / H) ** (1.0 / p)
    k = np.arange(N + 1, dtype=float)
    return (cp / 2.0) ** p * (k / (p + 1.0)) ** (p + 1)


def bilevel_run(comp, y0, gamma=None, N=10, *, mu=None, eps=None, certify=True, tol=0.0,
                value0=None, grad0=None, trace=None, stage=0, full_output=False):
    """Accelerated bi-level high-order method on ``dom psi``.

    Stops after ``N`` iterations, when ``||grad f(T) + g|| <= tol``, or (with
    ``certify`` and ``mu``) when ``||grad f(T) + g||^2 / (2 mu) <= eps``.
    """
    dom, oracle, p = comp.domain, comp.oracle, comp.p
    gamma = 1.0 / p if gamma is None else float(gamma)
    y0 = as_vector(y0, dom.dim, "y0")
    if not dom.contains(y0, 1e-9):
        raise ContractViolation("y0 must be feasible")
    N = int(N)
    if N < 0:
        raise ContractViolation("N must be nonnegative")
    can_stop = certify and eps is not None and mu is not None and mu > 0
    A = bilevel_coefficients(comp.H, p, gamma, N)

    y, fy, gy = dom.project(y0), value0, grad0
    s = np.zeros_like(y0)
    certified, inner, it, L = False, 0, 0, 2.0
    un = np.inf
    for k in range(N):
        v = dom.power_prox_argmin(s, y0, p)
        a = A[k + 1] - A[k]
        z = dom.project((A[k] / A[k + 1]) * y + (a / A[k + 1]) * v)
        if k == 0 and grad0 is not None:
            res = necg_solve(comp, z, gamma, max(2.0, L / 2.0), value=value0, grad=grad0,
                             full_output=True)
        else:
            res = necg_solve(comp, z, gamma, max(2.0, L / 2.0), full_output=True)
        L = res.Lrel
        inner += res.iterations
        y, fy, gy = res.T, res.value, res.grad
        u = gy + res.g
        s += a * u
        it = k + 1
        # the smallest subgradient of Phi at y certifies the gap
        un = float(np.linalg.norm(gy + dom.min_norm_normal(y, gy)))
        g_calls, h_calls = _counts(oracle)
        _emit(trace, method="bilevel", stage=stage, iter=it, f=fy, grad_calls=g_calls,
              hess_calls=h_calls, residual=un)
        if can_stop and un * un <= 2.0 * mu * eps:
            certified = True
            break
        if un <= tol:
            break
    if not full_output:
        return y
    if fy is None:
        fy, gy = (value0, grad0) if grad0 is not None else oracle(y)
        un = float(np.linalg.norm(gy + dom.min_norm_normal(y, gy)))
    return TensorResult(y=y, value=fy, grad=gy, iterations=it, certified=certified,
                        inner_iterations=inner, residual=un)


def bilevel_rate_constant(H, p, gamma):
    """``K`` in ``gap <= K R^(p+1) / N^(p+1)`` implied by the ``A_k`` growth."""
    return 2.0**p * (p + 1.0) ** p * H / (1.0 - gamma)


def bilevel_restarted(comp, y0, mu, eps, R, *, gamma=None, rate_constant=None,
                      schedule="halving", certify=True, value0=None, grad0=None, trace=None,
                      full_output=False):
    """Restarted bi-level method for a ``mu``-strongly convex ``f``.

    Stage budgets solve ``K R_i^(p+1) / N^(p+1) <= mu R_i^2 / 4``, i.e.
    ``N_i = ceil((4 K R_i^(p-1) / mu)^(1/(p+1)))``.
    """
    p = comp.p
    gamma = 1.0 / p if gamma is None else float(gamma)
    y0 = as_vector(y0, comp.dim, "y0")
    if not comp.domain.contains(y0, 1e-9):
        raise ContractViolation("y0 must be feasible")
    y0 = comp.domain.project(y0)
    k = _stage_count(mu, R, eps)
    K = bilevel_rate_constant(comp.H, p, gamma) if rate_constant is None else float(rate_constant)
    radii = restart_radii(R, k, schedule)

    def stage(i, y, fy, gy, stage_eps):
        N_i = math.ceil((4.0 * K * radii[i] ** (p - 1) / mu) ** (1.0 / (p + 1)))
        res = bilevel_run(comp, y, gamma, N_i, mu=mu, eps=stage_eps, certify=certify,
                          value0=fy, grad0=gy, trace=trace, stage=i, full_output=True)
        return N_i, res

    dom = comp.domain
    return _restart_loop(comp.oracle, y0, mu, eps, radii, k, certify, stage, full_output,
                         residual=lambda y, g: float(np.linalg.norm(g + dom.min_norm_normal(y, g))),
                         start=(value0, grad0))
