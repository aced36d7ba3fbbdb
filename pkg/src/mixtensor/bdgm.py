"""Bregman distance gradient method for the regularized third-order model.

The model around an anchor ``y_hat`` is

    Omega(z) = f(y_hat) + <g, h> + 1/2 <A h, h> + 1/6 D^3 f(y_hat)[h]^3 + L3/4 ||h||^4,

with ``h = z - y_hat``.  Its gradient is approximated with the gradient
difference surrogate so only gradients and one Hessian are needed.  Each
step minimizes a linearization plus a Bregman term generated by
``rho(h) = 1/2 <A h, h> + L3/4 ||h||^4`` over a ball around the anchor;
in the eigenbasis of ``A`` this is a scalar secular equation.
"""
from __future__ import annotations

import math
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np

from .exceptions import ContractViolation, ConvergenceFailure
from .model import as_vector, third_directional_fd
from .secular import minimize_power_regularized

__all__ = ["KAPPA", "GAMMA", "BdgmConfig", "BdgmWorkspace", "BdgmResult", "bdgm_delta",
           "bregman_step", "bdgm_solve", "listen_exits"]

KAPPA = 2.0 * (1.0 + 1.0 / math.sqrt(2.0))
GAMMA = 1.0 / 6.0
_EPS = np.finfo(float).eps


@dataclass
class BdgmConfig:
    """Tuning knobs.

    Attributes
    ----------
    delta : float
        Inner accuracy used when no target ``eps`` is given.
    max_iters : int
        Iteration cap; exceeding it raises :class:`ConvergenceFailure`.
    secular_tol : float
        Relative tolerance of the scalar root finds.
    delta_constant : float
        Constant in front of the accuracy rule used when ``eps`` is given.
    roundoff_floor : bool
        Raise ``delta`` to the estimated floating-point noise level of the
        surrogate gradient.  Without it small targets are unreachable.
    """

    delta: float = 1e-12
    max_iters: int = 500
    secular_tol: float = 1e-14
    delta_constant: float = 1.0
    roundoff_floor: bool = True

    def __post_init__(self):
        if not self.delta > 0:
            raise ContractViolation("delta must be positive")
        if int(self.max_iters) < 1:
            raise ContractViolation("max_iters must be at least 1")
        if not self.secular_tol > 0:
            raise ContractViolation("secular_tol must be positive")
        if not self.delta_constant > 0:
            raise ContractViolation("delta_constant must be positive")


def bdgm_delta(eps, grad_norm, hess_norm, L3, constant=1.0):
    """Accuracy ``C eps^1.5 / (||g||^0.5 + ||A||^1.5 / L3^0.5)``."""
    denom = math.sqrt(grad_norm) + hess_norm**1.5 / math.sqrt(L3)
    if denom == 0.0:
        return float(eps)
    return constant * eps**1.5 / denom


@dataclass
class BdgmWorkspace:
    """Per-anchor data: Hessian eigenbasis, feasible radius, step constant."""

    anchor: np.ndarray
    grad: np.ndarray
    hess: np.ndarray
    eigvals: np.ndarray
    eigvecs: np.ndarray
    L3: float
    radius: float
    kappa: float = KAPPA

    @classmethod
    def build(cls, anchor, grad, hess, L3):
        if not L3 > 0:
            raise ContractViolation("L3 must be positive")
        w, V = np.linalg.eigh(hess)
        scale = max(1.0, float(np.max(np.abs(w))))
        if w[0] < -1e-10 * scale:
            raise ContractViolation(f"Hessian is not positive semidefinite (min eig {w[0]:.3e})")
        w = np.maximum(w, 0.0)
        gnorm = float(np.linalg.norm(grad))
        radius = 2.0 * ((2.0 + math.sqrt(2.0)) * gnorm / L3) ** (1.0 / 3.0)
        return cls(anchor=np.asarray(anchor, float), grad=np.asarray(grad, float),
                   hess=np.asarray(hess, float), eigvals=w, eigvecs=V, L3=float(L3),
                   radius=radius)

    @property
    def hess_norm(self):
        return float(self.eigvals[-1]) if self.eigvals.size else 0.0

    def rho(self, z):
        h = np.asarray(z, float) - self.anchor
        u = self.eigvecs.T @ h
        r2 = float(h @ h)
        return 0.5 * float(u @ (self.eigvals * u)) + 0.25 * self.L3 * r2 * r2

    def rho_grad(self, z):
        h = np.asarray(z, float) - self.anchor
        Ah = self.eigvecs @ (self.eigvals * (self.eigvecs.T @ h))
        return Ah + self.L3 * float(h @ h) * h


def bregman_step(workspace, z_k, g, L3=None, tol=1e-14):
    """Minimize ``<g, z - z_k> + kappa * beta_rho(z_k, z)`` over the ball ``S_k``.

    Stationarity gives ``kappa (A h + L3 ||h||^2 h) + nu h = kappa grad rho(z_k) - g``
    which :func:`minimize_power_regularized` solves in the eigenbasis.
    """
    ws = workspace
    L3 = ws.L3 if L3 is None else float(L3)
    z_k = as_vector(z_k, ws.anchor.size, "z_k")
    g = as_vector(g, ws.anchor.size, "g")
    b = ws.kappa * ws.rho_grad(z_k) - g
    h, _ = minimize_power_regularized(ws.kappa * ws.eigvals, ws.eigvecs, b, ws.kappa * L3, 3,
                                      radius=ws.radius, tol=tol)
    return ws.anchor + h


@dataclass
class BdgmResult:
    z: np.ndarray
    value: float
    grad: np.ndarray
    iterations: int
    residual: float
    target: float
    delta: float
    radius: float
    reason: str
    tau: float = float("nan")
    anchor: np.ndarray | None = field(default=None, repr=False)
    history: list = field(default_factory=list, repr=False)


_exit_listeners = []


@contextmanager
def listen_exits(callback):
    """Call ``callback(result, workspace, oracle)`` on every BDGM exit inside the block.

    ``result.tau`` is the difference step behind the last surrogate gradient.
    """
    _exit_listeners.append(callback)
    try:
        yield callback
    finally:
        _exit_listeners.remove(callback)


def _noise_level(ws, L3, hn):
    """Rounding level of the surrogate model gradient at step length ``hn``.

    ``e_g`` estimates the absolute error of one gradient evaluation near the
    anchor; the gradient difference divides it by ``tau^2``.
    """
    y = float(np.linalg.norm(ws.anchor)) + hn
    g_scale = float(np.linalg.norm(ws.grad)) + ws.hess_norm * y + L3 * y**3
    e_g = _EPS * max(g_scale, np.finfo(float).tiny)
    return 16.0 * e_g + 8.0 * hn * hn * math.sqrt(e_g * L3), e_g


def bdgm_solve(oracle, y_hat, L3, delta=None, *, eps=None, config=None, value=None, grad=None,
               trace=None, full_output=False):
    """Inexact minimizer of the regularized third-order model around ``y_hat``.

    Parameters
    ----------
    oracle : SecondOrderOracle
    y_hat : array_like
        Anchor point.
    L3 : float
        Lipschitz constant of the third derivative.
    delta : float, optional
        Accuracy.  If omitted it follows from ``eps`` through :func:`bdgm_delta`
        or falls back to ``config.delta``.
    eps : float, optional
        Target accuracy of the outer method.
    value, grad : optional
        Oracle data at ``y_hat`` if the caller already has it.
    trace : list, optional
        Receives one dict per iteration.
    full_output : bool
        Return a :class:`BdgmResult` instead of the point.

    Returns
    -------
    z : ndarray or BdgmResult
        A point with ``||g_phi(z)|| <= ||grad f(z)||/6 - delta`` or ``||g_phi(z)|| <= delta``.
    """
    cfg = config or BdgmConfig()
    if not L3 > 0:
        raise ContractViolation("L3 must be positive")
    y_hat = as_vector(y_hat, oracle.dim, "y_hat")
    if grad is None:
        value, grad = oracle(y_hat)
    grad = np.asarray(grad, float)
    ws = BdgmWorkspace.build(y_hat, grad, oracle.hessian(y_hat), L3)
    gnorm = float(np.linalg.norm(grad))

    if delta is None:
        if eps is not None:
            if not eps > 0:
                raise ContractViolation("eps must be positive")
            delta = bdgm_delta(eps, gnorm, ws.hess_norm, L3, cfg.delta_constant)
        else:
            delta = cfg.delta
    if not delta > 0:
        raise ContractViolation("delta must be positive")
    delta_req = float(delta)
    _, e_g = _noise_level(ws, L3, ws.radius)
    # fd step length balancing rounding against truncation
    step_floor = (e_g / L3) ** 0.25

    def delta_at(hn):
        if not cfg.roundoff_floor:
            return delta_req
        return max(delta_req, _noise_level(ws, L3, hn)[0])

    delta = delta_at(0.0)
    tau_rule = 3.0 * delta / (8.0 * (2.0 + math.sqrt(2.0)) * gnorm) if gnorm > 0 else 1.0

    def result(z, fz, gz, it, res, tgt, reason, hist, tau=float("nan")):
        out = BdgmResult(z=z, value=float(fz), grad=gz, iterations=it, residual=res, target=tgt,
                         delta=delta, radius=ws.radius, reason=reason, tau=tau, anchor=y_hat,
                         history=hist)
        for cb in list(_exit_listeners):
            cb(out, ws, oracle)
        return out if full_output else z

    hist = []
    if gnorm <= 2.4 * delta:
        # ||grad f|| <= ||grad f||/6 + 2 delta already certifies the anchor
        return result(y_hat.copy(), value, grad, 0, gnorm, gnorm / 6.0 - delta, "anchor", hist)

    z, fz, gz, g_phi = y_hat.copy(), value, grad, grad.copy()
    c = ws.L3
    hn, tau = 0.0, float("nan")
    for it in range(int(cfg.max_iters) + 1):
        delta = delta_at(hn)
        res = float(np.linalg.norm(g_phi))
        tgt = float(np.linalg.norm(gz)) / 6.0 - delta
        row = {"iter": it, "residual": res, "target": tgt, "delta": delta, "radius": ws.radius,
               "tau": tau, "z": z}
        hist.append(row)
        if trace is not None:
            trace.append(row)
        if res <= tgt:
            return result(z, fz, gz, it, res, tgt, "test", hist, tau)
        if res <= delta:
            return result(z, fz, gz, it, res, tgt, "small", hist, tau)
        if it == cfg.max_iters:
            break
        z = bregman_step(ws, z, g_phi, tol=cfg.secular_tol)
        h = z - y_hat
        hn = float(np.linalg.norm(h))
        if hn == 0.0:
            g_phi, tau = grad.copy(), float("nan")
        else:
            tau = max(tau_rule, step_floor / hn)
            g_tau = third_directional_fd(oracle, y_hat, z, tau, anchor_grad=grad)
            g_phi = grad + ws.hess @ h + 0.5 * g_tau + c * hn * hn * h
        fz, gz = oracle(z)
    raise ConvergenceFailure("BDGM did not reach its stopping test", residual=res, target=tgt,
                             delta=delta, iterations=int(cfg.max_iters), anchor=y_hat)
