"""Synthetic quadratic-quartic min-min instances with certified constants.

    F(x, y) = 1/2 x'Ax + x'Cy + 1/2 y'By + b'x + c'y
              + sigma/12 sum_j (d_j'y)^4 + w sum_j log cosh(e_j'y)

``A = S + C B^{-1} C'`` with ``lambda_min(S) = mu_x``, so the outer function
``f(x) = min_y F(x, y)`` is ``mu_x``-strongly convex and the joint quadratic
part is positive semidefinite.  The linear terms are chosen so that a drawn
pair ``(x_c, y_c)`` inside both feasible sets is the joint minimizer.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .exceptions import ContractViolation, ConvergenceFailure
from .model import FirstOrderOracle, SecondOrderOracle, SmoothnessSpec, as_vector
from .sets import EuclideanBall, ProductSet, WholeSpace

__all__ = ["QuadQuarticMinMin", "make_instance", "reference_solve", "newton_minimize",
           "derivative_check", "surrogate_errors", "kkt_residual", "joint_set"]

_PARAMS = ("seed", "m", "n", "mu_x", "mu_y", "coupling_scale", "sigma", "r_x", "r_y",
           "logcosh", "L_B", "y_scale")


def _logcosh(t):
    a = np.abs(t)
    return a + np.log1p(np.exp(-2.0 * a)) - math.log(2.0)


def _orthogonal(rng, k):
    q, r = np.linalg.qr(rng.standard_normal((k, k)))
    return q * np.sign(np.diag(r))


def _spd(rng, k, lo, hi):
    lam = np.linspace(lo, hi, k) if k > 1 else np.array([lo])
    Q = _orthogonal(rng, k)
    M = (Q * lam) @ Q.T
    return 0.5 * (M + M.T)


@dataclass
class QuadQuarticMinMin:
    """One instance; build it with :func:`make_instance`."""

    seed: int
    m: int
    n: int
    mu_x: float
    mu_y: float
    coupling_scale: float
    sigma: float
    r_x: float
    r_y: float | None
    logcosh: float
    L_B: float
    y_scale: float
    A: np.ndarray = field(repr=False)
    B: np.ndarray = field(repr=False)
    C: np.ndarray = field(repr=False)
    S: np.ndarray = field(repr=False)
    b: np.ndarray = field(repr=False)
    c: np.ndarray = field(repr=False)
    D: np.ndarray = field(repr=False)
    E: np.ndarray = field(repr=False)
    x_c: np.ndarray = field(repr=False)
    y_c: np.ndarray = field(repr=False)
    L3_y: float = 0.0
    L_y: float = 0.0
    L_xy: float = 0.0
    mu_joint: float = 0.0
    curvature_radius: float = 0.0

    # ----- sets -------------------------------------------------------------
    @property
    def Q_x(self):
        return EuclideanBall(np.zeros(self.m), self.r_x)

    @property
    def Q_y(self):
        if self.r_y is None:
            return WholeSpace(self.n)
        return EuclideanBall(np.zeros(self.n), self.r_y)

    @property
    def compact_inner(self):
        return self.r_y is not None

    def smoothness(self, p=3):
        return SmoothnessSpec(mu_x=self.mu_x, mu_y=self.mu_y, L_y=self.L_y, L_p_y=self.L3_y,
                              L_xy=self.L_xy, p=p)

    # ----- value and derivatives -------------------------------------------
    def _nonquad(self, y):
        u = self.D @ y
        val = self.sigma / 12.0 * float(np.sum(u**4))
        grad = self.sigma / 3.0 * (self.D.T @ u**3)
        if self.logcosh:
            t = self.E @ y
            val += self.logcosh * float(np.sum(_logcosh(t)))
            grad = grad + self.logcosh * (self.E.T @ np.tanh(t))
        return val, grad

    def value(self, x, y):
        x = np.asarray(x, float)
        y = np.asarray(y, float)
        q = (0.5 * x @ self.A @ x + x @ self.C @ y + 0.5 * y @ self.B @ y + self.b @ x
             + self.c @ y)
        return float(q + self._nonquad(y)[0])

    def grad(self, x, y):
        """``(grad_x F, grad_y F)``."""
        x = np.asarray(x, float)
        y = np.asarray(y, float)
        gx = self.A @ x + self.C @ y + self.b
        gy = self.C.T @ x + self.B @ y + self.c + self._nonquad(y)[1]
        return gx, gy

    def hess_yy(self, x, y):
        y = np.asarray(y, float)
        u = self.D @ y
        H = self.B + self.sigma * (self.D.T * u**2) @ self.D
        if self.logcosh:
            t = self.E @ y
            H = H + self.logcosh * (self.E.T * (1.0 - np.tanh(t) ** 2)) @ self.E
        return 0.5 * (H + H.T)

    def hess_joint(self, x, y):
        Hyy = self.hess_yy(x, y)
        return np.block([[self.A, self.C], [self.C.T, Hyy]])

    def third_yy(self, y, h):
        """``D^3_y F(x, y)[h, h]`` (independent of ``x``)."""
        y = np.asarray(y, float)
        h = np.asarray(h, float)
        u, dh = self.D @ y, self.D @ h
        out = 2.0 * self.sigma * (self.D.T @ (u * dh**2))
        if self.logcosh:
            t, eh = self.E @ y, self.E @ h
            th = np.tanh(t)
            out = out + self.logcosh * (self.E.T @ (-2.0 * (1.0 - th**2) * th * eh**2))
        return out

    # ----- oracles ------------------------------------------------------------
    def inner_oracle(self, x):
        """Counting second-order oracle of ``y -> F(x, y)``."""
        x = as_vector(x, self.m, "x")

        def fg(y):
            return self.value(x, y), self.grad(x, y)[1]

        return SecondOrderOracle(fg, lambda y: self.hess_yy(x, y), self.n)

    def joint_oracle(self):
        """Counting first-order oracle of ``z = (x, y) -> F``."""
        m = self.m

        def fg(z):
            x, y = z[:m], z[m:]
            gx, gy = self.grad(x, y)
            return self.value(x, y), np.concatenate([gx, gy])

        return FirstOrderOracle(fg, self.m + self.n)

    def inner_solution(self, x, tol=1e-13):
        """Accurate ``y(x) = argmin_y F(x, y)`` over ``Q_y``."""
        x = as_vector(x, self.m, "x")

        def fgh(y):
            return self.value(x, y), self.grad(x, y)[1], self.hess_yy(x, y)

        balls = [] if self.r_y is None else [(slice(0, self.n), np.zeros(self.n), self.r_y)]
        return newton_minimize(fgh, self.y_c.copy() if self.Q_y.contains(self.y_c) else
                               np.zeros(self.n), balls, tol=tol)

    def outer_value(self, x, tol=1e-13):
        """``f(x) = min_y F(x, y)`` and its gradient ``grad_x F(x, y(x))``."""
        y = self.inner_solution(x, tol)
        return self.value(x, y), self.grad(x, y)[0]

    # ----- serialization ------------------------------------------------------
    def to_text(self):
        parts = []
        for k in _PARAMS:
            v = getattr(self, k)
            parts.append(f"{k}={'none' if v is None else repr(v)}")
        return "QuadQuarticMinMin " + " ".join(parts)

    @staticmethod
    def from_text(text):
        head, *fields = text.split()
        if head != "QuadQuarticMinMin":
            raise ContractViolation("not a QuadQuarticMinMin description")
        kw = {}
        for f in fields:
            k, v = f.split("=", 1)
            if k not in _PARAMS:
                raise ContractViolation(f"unknown field {k!r}")
            kw[k] = None if v == "none" else (int(v) if k in ("seed", "m", "n") else float(v))
        return make_instance(**kw)


def make_instance(seed, m, n, mu_x=0.1, mu_y=0.1, coupling_scale=0.5, sigma=0.1, r_x=1.0,
                  r_y=None, logcosh=0.0, L_B=1.0, y_scale=1.0):
    """Deterministic instance from ``seed``.

    Parameters
    ----------
    mu_x, mu_y : strong convexity of the outer function and of ``F`` in ``y``.
    coupling_scale : spectral norm of ``C``.
    sigma : quartic weight; ``L3_y = 2 sigma sum ||d_j||^4``.
    r_x : radius of the outer ball ``Q_x``.
    r_y : radius of the inner ball, or ``None`` for the whole space.
    logcosh : weight of an optional non-polynomial term.
    L_B : largest eigenvalue of ``B``.
    y_scale : norm of the inner part of the joint minimizer.
    """
    seed, m, n = int(seed), int(m), int(n)
    if not (m >= n >= 1):
        raise ContractViolation("need m >= n >= 1")
    if not (mu_x > 0 and mu_y > 0 and L_B >= mu_y and sigma >= 0 and logcosh >= 0):
        raise ContractViolation("invalid instance constants")
    if not r_x > 0 or (r_y is not None and not r_y > 0):
        raise ContractViolation("radii must be positive")
    rng = np.random.default_rng(seed)
    B = _spd(rng, n, mu_y, L_B)
    S = _spd(rng, m, mu_x, max(1.0, mu_x))
    C = rng.standard_normal((m, n))
    if coupling_scale > 0:
        C *= coupling_scale / np.linalg.norm(C, 2)
    else:
        C[:] = 0.0
    A = S + C @ np.linalg.solve(B, C.T)
    A = 0.5 * (A + A.T)
    D = rng.standard_normal((n, n)) / math.sqrt(n)
    E = rng.standard_normal((n, n)) / math.sqrt(n)

    x_c = rng.standard_normal(m)
    x_c *= 0.5 * r_x / np.linalg.norm(x_c)
    y_c = rng.standard_normal(n)
    y_norm = y_scale if r_y is None else min(y_scale, 0.5 * r_y)
    y_c *= y_norm / np.linalg.norm(y_c)

    prob = QuadQuarticMinMin(seed=seed, m=m, n=n, mu_x=float(mu_x), mu_y=float(mu_y),
                             coupling_scale=float(coupling_scale), sigma=float(sigma),
                             r_x=float(r_x), r_y=None if r_y is None else float(r_y),
                             logcosh=float(logcosh), L_B=float(L_B), y_scale=float(y_scale),
                             A=A, B=B, C=C, S=S, b=np.zeros(m), c=np.zeros(n), D=D, E=E,
                             x_c=x_c, y_c=y_c)
    # linear terms making (x_c, y_c) stationary
    gx, gy = prob.grad(x_c, y_c)
    prob.b = -gx
    prob.c = -gy

    d4 = float(np.sum(np.sum(D**2, axis=1) ** 2))
    e4 = float(np.sum(np.sum(E**2, axis=1) ** 2))
    prob.L3_y = 2.0 * sigma * d4 + 2.0 * logcosh * e4
    rho = max(1.0, 10.0 * (np.linalg.norm(x_c) + np.linalg.norm(y_c)))
    if r_y is not None:
        rho = min(rho, r_y)
    prob.curvature_radius = float(rho)
    # sum_j (d_j'y)^2 d_j d_j' <= ||y||^2 sum_j ||d_j||^2 d_j d_j'
    dd = (D.T * np.sum(D**2, axis=1)) @ D
    extra = sigma * rho**2 * float(np.linalg.eigvalsh(dd)[-1]) + logcosh * float(np.linalg.eigvalsh(E.T @ E)[-1])
    joint = np.block([[A, C], [C.T, B]])
    wj = np.linalg.eigvalsh(joint)
    if wj[0] < -1e-10 * max(1.0, wj[-1]):
        raise ContractViolation("joint Hessian is not positive semidefinite")
    prob.L_y = float(np.linalg.eigvalsh(B)[-1] + extra)
    prob.L_xy = float(wj[-1] + extra)
    prob.mu_joint = float(max(wj[0], 0.0))
    return prob


# ----- reference solver ---------------------------------------------------------

def newton_minimize(fgh, z0, balls=(), tol=1e-13, max_iter=200):
    """Minimize a smooth strongly convex function over a product of balls.

    ``fgh(z)`` returns value, gradient and Hessian.  Each ball is a
    ``(slice, center, radius)`` triple.  Ball constraints are handled by
    their multipliers: for fixed multipliers the penalized problem is
    solved by damped Newton, and every multiplier is found by a monotone
    scalar root search (nested when several balls are active).
    """
    z0 = np.asarray(z0, float)
    balls = list(balls)

    def solve_fixed(nus, start):
        z = start.copy()
        for _ in range(max_iter):
            f, g, H = _penalized(fgh, z, balls, nus)
            gn = float(np.linalg.norm(g))
            scale = 1.0 + abs(f)
            step = np.linalg.solve(H, -g)
            dec = float(-g @ step)
            if dec <= (tol * 1e-2) ** 2 * scale or gn <= 1e-15 * scale:
                return z
            t = 1.0
            while t > 1e-12:
                zt = z + t * step
                ft = _penalized(fgh, zt, balls, nus, need_hess=False)[0]
                if ft <= f - 0.25 * t * dec + 1e-15 * scale:
                    break
                t *= 0.5
            else:
                return z
            z = zt
            if dec <= tol**2 * scale and t == 1.0:
                # one more full step removes the remaining quadratic error
                f, g, H = _penalized(fgh, z, balls, nus)
                return z + np.linalg.solve(H, -g)
        raise ConvergenceFailure("Newton did not converge", grad_norm=gn)

    def solve_level(level, nus, start):
        if level == len(balls):
            return solve_fixed(nus, start)
        sl, center, radius = balls[level]

        def excess(nu):
            z = solve_level(level + 1, nus[:level] + [nu] + nus[level + 1:], start)
            return float(np.linalg.norm(z[sl] - center)) - radius, z

        e0, z = excess(0.0)
        if e0 <= 0.0:
            return z
        hi = 1.0
        while excess(hi)[0] > 0.0:
            hi *= 4.0
            if hi > 1e16:
                raise ConvergenceFailure("ball multiplier not bracketed")
        nu = brentq(lambda v: excess(v)[0], 0.0, hi, xtol=1e-15, rtol=1e-15, maxiter=300)
        z = excess(nu)[1]
        d = z[sl] - center
        z[sl] = center + d * min(1.0, radius / float(np.linalg.norm(d)))
        return z

    return solve_level(0, [0.0] * len(balls), z0)


def _penalized(fgh, z, balls, nus, need_hess=True):
    out = fgh(z)
    f, g = out[0], np.array(out[1], float)
    H = np.array(out[2], float) if need_hess else None
    for (sl, center, _), nu in zip(balls, nus):
        if nu:
            d = z[sl] - center
            f = f + 0.5 * nu * float(d @ d)
            g[sl] += nu * d
            if need_hess:
                idx = np.arange(z.size)[sl]
                H[idx, idx] += nu
    return f, g, H


def reference_solve(prob, tol=1e-12):
    """Joint minimizer ``(x*, y*, F*)`` over ``Q_x x Q_y``."""
    if not tol >= 1e-14:
        raise ContractViolation("tol must be at least 1e-14")
    m, n = prob.m, prob.n

    def fgh(z):
        x, y = z[:m], z[m:]
        gx, gy = prob.grad(x, y)
        return prob.value(x, y), np.concatenate([gx, gy]), prob.hess_joint(x, y)

    balls = [(slice(0, m), np.zeros(m), prob.r_x)]
    if prob.r_y is not None:
        balls.append((slice(m, m + n), np.zeros(n), prob.r_y))
    z = newton_minimize(fgh, np.zeros(m + n), balls, tol=tol)
    x, y = z[:m], z[m:]
    res = kkt_residual(prob, x, y)
    if res > max(1e3 * tol, 1e-10) * (1.0 + np.linalg.norm(prob.b) + np.linalg.norm(prob.c)):
        raise ConvergenceFailure("reference solve missed its tolerance", kkt=res)
    return x, y, prob.value(x, y)


def kkt_residual(prob, x, y):
    """Norm of the projected-gradient residual on ``Q_x x Q_y``."""
    gx, gy = prob.grad(x, y)
    rx = x - prob.Q_x.project(x - gx)
    ry = y - prob.Q_y.project(y - gy)
    return float(math.hypot(np.linalg.norm(rx), np.linalg.norm(ry)))


# ----- derivative checks --------------------------------------------------------

def derivative_check(prob, point, order, h=None, direction=None):
    """Maximum relative error of an analytic derivative against differences.

    ``point`` is ``(x, y)``.  Order 1 checks the joint gradient, order 2 the
    Hessian in ``y``, order 3 compares the gradient-difference surrogate
    (``tau = 1e-3``) with the analytic ``D^3_y F[h, h]``.
    """
    x, y = (np.asarray(v, float) for v in point)
    eps = np.finfo(float).eps
    if order == 1:
        h = eps ** (1 / 3) if h is None else h
        gx, gy = prob.grad(x, y)
        g = np.concatenate([gx, gy])
        z = np.concatenate([x, y])
        fd = np.empty_like(z)
        for i in range(z.size):
            e = np.zeros_like(z)
            e[i] = h * max(1.0, abs(z[i]))
            fd[i] = (prob.value((z + e)[:prob.m], (z + e)[prob.m:])
                     - prob.value((z - e)[:prob.m], (z - e)[prob.m:])) / (2 * e[i])
        return float(np.max(np.abs(fd - g)) / max(1.0, np.max(np.abs(g))))
    if order == 2:
        h = eps ** (1 / 3) if h is None else h
        Hy = prob.hess_yy(x, y)
        fd = np.empty_like(Hy)
        for i in range(prob.n):
            e = np.zeros(prob.n)
            e[i] = h * max(1.0, abs(y[i]))
            fd[:, i] = (prob.grad(x, y + e)[1] - prob.grad(x, y - e)[1]) / (2 * e[i])
        return float(np.max(np.abs(fd - Hy)) / max(1.0, np.max(np.abs(Hy))))
    if order == 3:
        if direction is None:
            direction = np.random.default_rng(0).standard_normal(prob.n)
        err = surrogate_errors(prob, point, direction, [1e-3 if h is None else h])[0]
        exact = prob.third_yy(y, direction)
        return float(err / max(1.0, np.linalg.norm(exact)))
    raise ContractViolation("order must be 1, 2 or 3")


def surrogate_errors(prob, point, direction, taus):
    """``||g^tau - D^3 F[h, h]||`` for each ``tau`` in ``taus``."""
    x, y = (np.asarray(v, float) for v in point)
    h = np.asarray(direction, float)
    exact = prob.third_yy(y, h)
    g0 = prob.grad(x, y)[1]
    out = []
    for tau in taus:
        gp = prob.grad(x, y + tau * h)[1]
        gm = prob.grad(x, y - tau * h)[1]
        out.append(float(np.linalg.norm((gp + gm - 2 * g0) / tau**2 - exact)))
    return np.array(out)


def joint_set(prob):
    return ProductSet(prob.Q_x, prob.Q_y)
