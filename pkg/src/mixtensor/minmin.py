"""Mixed oracle for min-min problems.

For ``f(x) = min_{y in Q_y} F(x, y)`` an approximate inner minimizer ``y_e``
with gap ``e`` gives the pair ``(F(x, y_e) - 2 delta, grad_x F(x, y_e))``,
a ``(6 delta, 2 L_xy)``-oracle for ``f``.  The inner problem is solved by a
third-order method using gradients and Hessians in ``y`` only, and the
outer problem by the restarted fast gradient method.
"""
from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.optimize import minimize

from .exceptions import ConfigurationError, ContractViolation, ConvergenceFailure
from .fgm import fgm_restarted_inexact, restart_plan
from .model import InexactOracleOutput, SecondOrderOracle, SmoothnessSpec, as_vector
from .sets import EuclideanBall, ProductSet, SimpleSet, WholeSpace
from .tensor import CompositeObjective, atmi3_restarted, bilevel_restarted
from .zoo import newton_minimize

__all__ = [
    "MinMinProblem",
    "MixedOracleRecord",
    "MinMinReport",
    "delta_unconstrained",
    "delta_compact",
    "delta_max_for_outer",
    "eps_tilde_for_delta",
    "eps_tilde_for_target",
    "mixed_oracle_eval",
    "minmin_solve",
    "joint_fgm_solve",
    "estimate_D",
]

_L3_FLOOR = 1e-10


# ----- accuracy formulas -----------------------------------------------------------

def delta_unconstrained(eps_tilde, L_y, mu_y, D):
    """``(2 L_y / mu_y) (e + 2 sqrt(D e))``."""
    if eps_tilde < 0 or not (L_y > 0 and mu_y > 0) or D < 0:
        raise ContractViolation("need eps_tilde >= 0, L_y > 0, mu_y > 0, D >= 0")
    return 2.0 * L_y / mu_y * (eps_tilde + 2.0 * math.sqrt(D * eps_tilde))


def delta_compact(eps_tilde, H, gamma, mu_y, D, p=3):
    """``H / (1 - gamma) (sqrt(2 D / mu_y) + sqrt(2 e / mu_y))^(p+1)``.

    Does not vanish as ``e -> 0``; see :func:`eps_tilde_for_delta`.
    """
    if eps_tilde < 0 or not (H > 0 and mu_y > 0) or D < 0:
        raise ContractViolation("need eps_tilde >= 0, H > 0, mu_y > 0, D >= 0")
    if not 0.0 <= gamma <= 1.0 / p:
        raise ContractViolation("gamma must lie in [0, 1/p]")
    r = math.sqrt(2.0 * D / mu_y) + math.sqrt(2.0 * eps_tilde / mu_y)
    return H / (1.0 - gamma) * r ** (p + 1)


def delta_max_for_outer(mu_x, L_xy, R_x):
    """Largest admissible oracle error ``mu_x R_x^2 / (10 (sqrt(20 L_xy / mu_x) + 3))``."""
    if not (mu_x > 0 and L_xy > 0 and R_x > 0):
        raise ContractViolation("need mu_x, L_xy, R_x > 0")
    return mu_x * R_x * R_x / (10.0 * (math.sqrt(20.0 * L_xy / mu_x) + 3.0))


def _delta_of(variant, eps_tilde, c):
    if variant == "unconstrained":
        return delta_unconstrained(eps_tilde, c["L_y"], c["mu_y"], c["D"])
    return delta_compact(eps_tilde, c["H"], c["gamma"], c["mu_y"], c["D"], c.get("p", 3))


def eps_tilde_for_delta(delta_target, variant, constants):
    """Largest inner gap ``e`` with ``delta(e) <= delta_target``.

    ``constants`` holds ``L_y, mu_y, D`` (unconstrained) or
    ``H, gamma, mu_y, D, p`` (compact).

    Raises
    ------
    ConfigurationError
        Compact case whose floor ``delta(0)`` already exceeds the target.
    """
    if not delta_target > 0:
        raise ContractViolation("delta_target must be positive")
    c = dict(constants)
    if variant == "unconstrained":
        kappa = delta_target * c["mu_y"] / (2.0 * c["L_y"])
        sD = math.sqrt(c["D"])
        t = kappa / (sD + math.sqrt(c["D"] + kappa))
        e = t * t
    elif variant == "compact":
        p = c.get("p", 3)
        floor = delta_compact(0.0, c["H"], c["gamma"], c["mu_y"], c["D"], p)
        w = (delta_target * (1.0 - c["gamma"]) / c["H"]) ** (1.0 / (p + 1)) \
            - math.sqrt(2.0 * c["D"] / c["mu_y"])
        if w <= 0 or floor >= delta_target:
            raise ConfigurationError(
                f"requested oracle error {delta_target:.3e} is below the compact-domain "
                f"floor {floor:.3e}; increase eps or shrink the inner domain")
        e = 0.5 * c["mu_y"] * w * w
    else:
        raise ContractViolation(f"unknown variant {variant!r}")
    # undo rounding in the inversion
    for _ in range(64):
        if _delta_of(variant, e, c) <= delta_target:
            break
        e *= 1.0 - 1e-14
    return e


def eps_tilde_for_target(outer, variant, constants):
    """Inner gap making the oracle error at most :func:`delta_max_for_outer`.

    ``outer`` holds ``mu_x, L_xy, R_x``.
    """
    return eps_tilde_for_delta(delta_max_for_outer(outer["mu_x"], outer["L_xy"], outer["R_x"]),
                               variant, constants)


# ----- problem ------------------------------------------------------------------------

@dataclass
class MinMinProblem:
    """``min_{x in Q_x} min_{y in Q_y} F(x, y)``.

    Attributes
    ----------
    value : callable ``(x, y) -> float``
    grad : callable ``(x, y) -> (grad_x, grad_y)``
    hess_yy : callable ``(x, y) -> ndarray``
    Q_x, Q_y : SimpleSet
        ``Q_x`` must be compact.
    spec : SmoothnessSpec
    D : float, optional
        Bound on ``F(x, y0) - min_y F(x, y)`` over ``Q_x``; estimated if omitted.
    L_joint, mu_joint : float, optional
        Joint constants, only needed by :func:`joint_fgm_solve`.
    F_star : float, optional
        Known optimal value, used for reporting.
    """

    value: Callable
    grad: Callable
    hess_yy: Callable
    Q_x: SimpleSet
    Q_y: SimpleSet
    spec: SmoothnessSpec
    D: float | None = None
    L_joint: float | None = None
    mu_joint: float | None = None
    F_star: float | None = None
    name: str = "minmin"

    def __post_init__(self):
        if not self.Q_x.is_compact:
            raise ContractViolation("Q_x must be compact")
        if self.D is not None and not self.D >= 0:
            raise ContractViolation("D must be nonnegative")

    @property
    def m(self):
        return self.Q_x.dim

    @property
    def n(self):
        return self.Q_y.dim

    @property
    def variant(self):
        return "compact" if self.Q_y.is_compact else "unconstrained"

    @classmethod
    def from_zoo(cls, prob, F_star=None):
        """Wrap a :class:`~mixtensor.zoo.QuadQuarticMinMin` with analytic ``D``."""
        g0 = float(np.linalg.norm(prob.c)) + float(np.linalg.norm(prob.C, 2)) * prob.r_x
        # F(x, 0) - F(x, y(x)) <= <grad_y F(x, 0), -y(x)>, and <= |grad|^2 / (2 mu_y)
        D = g0 * g0 / (2.0 * prob.mu_y)
        if prob.r_y is not None:
            D = min(D, g0 * prob.r_y)
        return cls(value=prob.value, grad=prob.grad, hess_yy=prob.hess_yy, Q_x=prob.Q_x,
                   Q_y=prob.Q_y, spec=prob.smoothness(3), D=D, L_joint=prob.L_xy,
                   mu_joint=prob.mu_joint, F_star=F_star, name=f"zoo-seed{prob.seed}")

    def inner_oracle(self, x):
        x = as_vector(x, self.m, "x")

        def fg(y):
            return self.value(x, y), self.grad(x, y)[1]

        return SecondOrderOracle(fg, lambda y: self.hess_yy(x, y), self.n)

    @property
    def L3_eff(self):
        # the tensor step needs a positive regularizer even for quadratic inner parts
        return max(self.spec.L_p_y, _L3_FLOOR * max(1.0, self.spec.L_y))

    def delta_constants(self):
        D = self.D if self.D is not None else estimate_D(self)
        if self.variant == "unconstrained":
            return {"L_y": self.spec.L_y, "mu_y": self.spec.mu_y, "D": D}
        p = self.spec.p
        return {"H": 6.0 / math.factorial(p - 1) * self.L3_eff, "gamma": 1.0 / p,
                "mu_y": self.spec.mu_y, "D": D, "p": p}

    def accurate_inner(self, x, y0=None, tol=1e-12):
        """High-accuracy ``argmin_y F(x, y)`` by damped Newton (reference only)."""
        x = as_vector(x, self.m, "x")
        y0 = np.zeros(self.n) if y0 is None else self.Q_y.project(y0)

        def fgh(y):
            return self.value(x, y), self.grad(x, y)[1], self.hess_yy(x, y)

        if isinstance(self.Q_y, WholeSpace):
            return newton_minimize(fgh, y0, (), tol=tol)
        if isinstance(self.Q_y, EuclideanBall):
            return newton_minimize(fgh, y0, [(slice(0, self.n), self.Q_y.center,
                                              self.Q_y.radius)], tol=tol)
        res = minimize(lambda y: (self.value(x, y), self.grad(x, y)[1]), y0, jac=True,
                       method="L-BFGS-B", bounds=list(zip(self.Q_y.lower, self.Q_y.upper)),
                       options={"ftol": 1e-16, "gtol": tol, "maxiter": 5000})
        return self.Q_y.project(res.x)

    def outer_value(self, x, tol=1e-12):
        """``f(x)`` and ``grad f(x)`` through :meth:`accurate_inner`."""
        y = self.accurate_inner(x, tol=tol)
        return self.value(x, y), self.grad(x, y)[0]

    def spot_check_convexity(self, samples=16, seed=0, tol=1e-9):
        """Gradient monotonicity of ``F`` on random pairs; returns the worst ratio."""
        rng = np.random.default_rng(seed)
        worst = np.inf
        scale = self.Q_x.diameter
        for _ in range(samples):
            xs = [self.Q_x.project(rng.standard_normal(self.m) * scale) for _ in range(2)]
            ys = [self.Q_y.project(rng.standard_normal(self.n)) for _ in range(2)]
            g = [np.concatenate(self.grad(a, b)) for a, b in zip(xs, ys)]
            dz = np.concatenate([xs[0] - xs[1], ys[0] - ys[1]])
            worst = min(worst, float((g[0] - g[1]) @ dz) / max(float(dz @ dz), 1e-300))
        if worst < -tol:
            raise ContractViolation(f"F is not jointly convex on samples (ratio {worst:.3e})")
        return worst


def estimate_D(prob, samples=32, seed=0, y0=None):
    """``2 max F(x, y0) - F(x, y(x))`` over boundary and random points of ``Q_x``."""
    rng = np.random.default_rng(seed)
    y0 = np.zeros(prob.n) if y0 is None else prob.Q_y.project(y0)
    best = 0.0
    for i in range(samples):
        u = rng.standard_normal(prob.m)
        x = prob.Q_x.project(u * (1e6 if i % 2 == 0 else rng.uniform() * prob.Q_x.diameter))
        y = prob.accurate_inner(x)
        best = max(best, prob.value(x, y0) - prob.value(x, y))
    return 2.0 * best


# ----- mixed oracle ---------------------------------------------------------------

@dataclass
class MixedOracleRecord:
    """One mixed-oracle answer.  ``as_inexact`` gives the ``(6 delta, 2 L_xy)`` view."""

    x: np.ndarray
    y_eps: np.ndarray
    f_delta: float
    g_delta: np.ndarray
    delta: float
    eps_tilde: float
    L_xy: float
    inner_grad_calls: int = 0
    inner_hess_calls: int = 0
    inner_stages: int = 0

    @property
    def F_value(self):
        return self.f_delta + 2.0 * self.delta

    def as_inexact(self):
        return InexactOracleOutput(self.f_delta, self.g_delta, 6.0 * self.delta,
                                   2.0 * self.L_xy)


def _inner_solve(prob, x, eps_tilde, y_start):
    """Inner minimization in ``y`` to gap ``eps_tilde``; returns (y, oracle, stages)."""
    sp = prob.spec
    oracle = prob.inner_oracle(x)
    y = prob.Q_y.project(y_start)
    fy, gy = oracle(y)
    if prob.variant == "unconstrained":
        gn = float(np.linalg.norm(gy))
        if gn * gn <= 2.0 * sp.mu_y * eps_tilde:
            return y, oracle, 0
        # ||y - y*|| <= ||grad|| / mu_y
        R = gn / sp.mu_y
        res = atmi3_restarted(oracle, y, prob.L3_eff, sp.mu_y, eps_tilde, R, value0=fy,
                              grad0=gy, full_output=True)
        return res.y, oracle, res.stages_run
    dom = prob.Q_y
    gn = float(np.linalg.norm(gy + dom.min_norm_normal(y, gy)))
    if gn * gn <= 2.0 * sp.mu_y * eps_tilde:
        return y, oracle, 0
    # gradient mapping bound ||y - y*|| <= 2 ||G_L(y)|| / mu_y
    gmap = sp.L_y * (y - dom.project(y - gy / sp.L_y))
    R = min(dom.diameter, 2.0 * float(np.linalg.norm(gmap)) / sp.mu_y)
    if not R > 0:
        return y, oracle, 0
    comp = CompositeObjective(oracle, dom, p=sp.p, Lp=prob.L3_eff)
    res = bilevel_restarted(comp, y, sp.mu_y, eps_tilde, R, value0=fy, grad0=gy,
                            full_output=True)
    return res.y, oracle, res.stages_run


def mixed_oracle_eval(prob, x, eps_tilde, warm_start=None, constants=None):
    """Mixed ``(6 delta, 2 L_xy)``-oracle of ``f(x) = min_y F(x, y)`` at ``x``.

    Parameters
    ----------
    prob : MinMinProblem
    x : array_like
        Point of ``Q_x``.
    eps_tilde : float
        Inner gap.
    warm_start : array_like, optional
        Inner starting point, e.g. the previous ``y_eps``.
    constants : dict, optional
        Output of ``prob.delta_constants()``; computed when omitted.
    """
    x = as_vector(x, prob.m, "x")
    if not prob.Q_x.contains(x, 1e-9):
        raise ContractViolation("x must lie in Q_x")
    if not eps_tilde > 0:
        raise ContractViolation("eps_tilde must be positive")
    c = prob.delta_constants() if constants is None else constants
    y0 = np.zeros(prob.n) if warm_start is None else as_vector(warm_start, prob.n, "warm_start")
    try:
        y, oracle, stages = _inner_solve(prob, x, eps_tilde, y0)
    except ConvergenceFailure as err:
        raise ConvergenceFailure(f"inner solve failed at x (|x| = {np.linalg.norm(x):.3e}): "
                                 f"{err}", x=x, **err.info) from err
    delta = _delta_of(prob.variant, eps_tilde, c)
    F = prob.value(x, y)
    gx = prob.grad(x, y)[0]
    return MixedOracleRecord(x=x, y_eps=y, f_delta=F - 2.0 * delta, g_delta=gx, delta=delta,
                             eps_tilde=eps_tilde, L_xy=prob.spec.L_xy,
                             inner_grad_calls=oracle.grad_calls,
                             inner_hess_calls=oracle.hess_calls, inner_stages=stages)


# ----- drivers ------------------------------------------------------------------------

@dataclass
class MinMinReport:
    outer_grad_calls: int = 0
    inner_grad_calls: int = 0
    inner_hess_calls: int = 0
    stages: int = 0
    final_gap: float | None = None
    wall_ms: float = 0.0
    stages_planned: int = 0
    eps_tilde: list = field(default_factory=list)

    def weighted_cost(self, m, n):
        """Cost with an outer gradient worth ``m``, inner gradient ``n``, inner Hessian ``n^2``."""
        return self.outer_grad_calls * m + self.inner_grad_calls * n + self.inner_hess_calls * n * n

    def to_dict(self):
        return {"outer_grad_calls": self.outer_grad_calls,
                "inner_grad_calls": self.inner_grad_calls,
                "inner_hess_calls": self.inner_hess_calls, "stages": self.stages,
                "final_gap": self.final_gap, "wall_ms": self.wall_ms}

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)


def minmin_solve(prob, x0, y0, eps, *, mode="per_stage", trace=None):
    """Solve the min-min problem to ``F(x, y) - F* <= eps``.

    The outer restarted fast gradient method runs with ``L = 2 L_xy``,
    ``mu = mu_x``, ``R = diam Q_x`` and target ``eps / 2`` on the mixed oracle.
    In ``per_stage`` mode every stage asks for ``6 delta <= delta_i``; in
    ``fixed`` mode one inner gap with ``delta <= delta_max`` is used
    throughout.  A last inner solve to ``eps / 2`` produces ``y``.

    Returns
    -------
    x, y : ndarray
    report : MinMinReport

    Raises
    ------
    ConfigurationError
        If the requested accuracy is unreachable on a compact inner domain.
        Raised before any oracle call.
    """
    t0 = time.perf_counter()
    if not eps > 0:
        raise ContractViolation("eps must be positive")
    if mode not in ("per_stage", "fixed"):
        raise ContractViolation(f"unknown mode {mode!r}")
    x0 = as_vector(x0, prob.m, "x0")
    y0 = as_vector(y0, prob.n, "y0")
    if not prob.Q_x.contains(x0, 1e-9) or not prob.Q_y.contains(y0, 1e-9):
        raise ContractViolation("starting points must be feasible")
    sp = prob.spec
    c = prob.delta_constants()
    L, mu, R = 2.0 * sp.L_xy, sp.mu_x, prob.Q_x.diameter
    N1, k, radii, deltas = restart_plan(L, mu, 0.5 * eps, R)

    # all inner targets are fixed by the plan, so infeasible ones surface here
    if mode == "fixed":
        e_fixed = eps_tilde_for_target({"mu_x": mu, "L_xy": sp.L_xy, "R_x": R}, prob.variant, c)
        stage_eps = [e_fixed] * k
    else:
        stage_eps = [eps_tilde_for_delta(d / 6.0, prob.variant, c) for d in deltas]

    report = MinMinReport(stages_planned=k, eps_tilde=list(stage_eps))
    state = {"y": y0.copy(), "stage": -1, "iter": 0}

    def provider(delta_i):
        state["stage"] += 1
        state["iter"] = 0
        e = stage_eps[state["stage"]]

        def oracle(x):
            rec = mixed_oracle_eval(prob, x, e, warm_start=state["y"], constants=c)
            state["y"] = rec.y_eps
            state["iter"] += 1
            report.outer_grad_calls += 1
            report.inner_grad_calls += rec.inner_grad_calls
            report.inner_hess_calls += rec.inner_hess_calls
            if trace is not None:
                trace.append({"method": "mixed", "stage": state["stage"], "iter": state["iter"],
                              "f": rec.F_value, "grad_x_calls": report.outer_grad_calls,
                              "grad_y_calls": report.inner_grad_calls,
                              "hess_y_calls": report.inner_hess_calls,
                              "delta": 6.0 * rec.delta, "eps_tilde": e})
            return rec.as_inexact()

        return oracle

    res = fgm_restarted_inexact(prob.Q_x, provider, x0, L, mu, 0.5 * eps, R, full_output=True)
    x = res.x
    report.stages = res.stages_run
    y, oracle, _ = _inner_solve(prob, x, 0.5 * eps, state["y"])
    report.inner_grad_calls += oracle.grad_calls
    report.inner_hess_calls += oracle.hess_calls
    if prob.F_star is not None:
        report.final_gap = prob.value(x, y) - prob.F_star
    report.wall_ms = 1e3 * (time.perf_counter() - t0)
    return x, y, report


def joint_fgm_solve(prob, x0, y0, eps, *, trace=None):
    """Baseline: restarted fast gradient method on ``(x, y)`` jointly with exact gradients.

    Uses ``L_joint`` and ``mu_joint``; the starting radius is the smaller of
    the set diameter and ``2 ||G(z0)|| / mu_joint``.  Every call costs one
    full gradient.
    """
    t0 = time.perf_counter()
    if prob.L_joint is None or not prob.mu_joint:
        raise ConfigurationError("joint FGM needs L_joint and a positive mu_joint")
    if not eps > 0:
        raise ContractViolation("eps must be positive")
    Q = ProductSet(prob.Q_x, prob.Q_y)
    m = prob.m
    z0 = np.concatenate([as_vector(x0, m, "x0"), as_vector(y0, prob.n, "y0")])
    if not Q.contains(z0, 1e-9):
        raise ContractViolation("starting points must be feasible")
    L, mu = prob.L_joint, prob.mu_joint
    report = MinMinReport()
    state = {"stage": 0, "next": 0}

    def fg(z):
        report.outer_grad_calls += 1
        gx, gy = prob.grad(z[:m], z[m:])
        f = prob.value(z[:m], z[m:])
        if trace is not None:
            trace.append({"method": "joint_fgm", "stage": state["stage"],
                          "iter": report.outer_grad_calls, "f": f,
                          "grad_x_calls": report.outer_grad_calls,
                          "grad_y_calls": report.outer_grad_calls, "hess_y_calls": 0,
                          "delta": 0.0, "eps_tilde": 0.0})
        return f, np.concatenate([gx, gy])

    f0, g0 = fg(z0)
    G = L * (z0 - Q.project(z0 - g0 / L))
    R = min(Q.diameter, 2.0 * float(np.linalg.norm(G)) / mu)
    if R > 0 and mu * R * R > eps:
        def provider(_delta):
            state["stage"] = state["next"]
            state["next"] += 1
            return fg

        res = fgm_restarted_inexact(Q, provider, z0, L, mu, eps, R, full_output=True)
        z = res.x
        report.stages = res.stages_run
        report.stages_planned = res.stages_planned
    else:
        z = z0
    x, y = z[:m], z[m:]
    if prob.F_star is not None:
        report.final_gap = prob.value(x, y) - prob.F_star
    report.wall_ms = 1e3 * (time.perf_counter() - t0)
    return x, y, report
