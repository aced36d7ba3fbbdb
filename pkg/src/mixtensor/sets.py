"""Simple convex sets: explicit projections and prox-model minimizers."""
from __future__ import annotations

import numpy as np
from scipy.optimize import brentq

from .exceptions import ContractViolation, NumericalError
from .model import as_vector
from .secular import minimize_power_regularized

__all__ = ["SimpleSet", "WholeSpace", "EuclideanBall", "Box", "ProductSet", "set_from_dict"]

_TOL = 1e-12


class SimpleSet:
    """Base class.  Subclasses implement ``project`` and ``_power_prox``."""

    dim: int
    is_compact = False

    def _check(self, x, name="x"):
        return as_vector(x, self.dim, name)

    def contains(self, x, tol=_TOL):
        raise NotImplementedError

    def project(self, x):
        raise NotImplementedError

    @property
    def diameter(self):
        return np.inf

    def min_norm_normal(self, x, grad):
        """Normal-cone element ``v`` at ``x`` minimizing ``||grad + v||``."""
        return np.zeros_like(self._check(x))

    def prox_linear_argmin(self, g, anchor, gamma):
        """``argmin <g, x - anchor> + gamma/2 ||x - anchor||^2`` over the set."""
        if not gamma > 0:
            raise ContractViolation("gamma must be positive")
        anchor = self._check(anchor, "anchor")
        g = self._check(g, "g")
        return self.project(anchor - g / gamma)

    def power_prox_argmin(self, s, base, p):
        """``argmin <s, y> + ||y - base||^(p+1) / (p+1)`` over the set."""
        if p < 2:
            raise ContractViolation("power_prox_argmin needs p >= 2")
        s = self._check(s, "s")
        base = self._check(base, "base")
        if not np.any(s):
            return self.project(base)
        return self._power_prox(s, base, p)

    def _power_prox(self, s, base, p):
        # Generic route: for t = ||y - base||^(p-1) the minimizer is the
        # projection of base - s/t, and t solves a scalar equation.
        def resid(t):
            y = self.project(base - s / t)
            return float(np.linalg.norm(y - base)) ** (p - 1) - t

        snorm = float(np.linalg.norm(s))
        t_hi = snorm ** ((p - 1) / p)
        for _ in range(200):
            if resid(t_hi) <= 0:
                break
            t_hi *= 2.0
        else:
            raise NumericalError("power prox: upper bracket not found")
        t_lo = t_hi
        for _ in range(200):
            t_lo *= 0.5
            if resid(t_lo) >= 0:
                break
        else:
            # the optimum sits at a kink: base is optimal up to rounding
            return self.project(base)
        if resid(t_hi) == 0:
            t = t_hi
        elif resid(t_lo) == 0:
            t = t_lo
        else:
            t = brentq(resid, t_lo, t_hi, xtol=t_hi * 1e-15, rtol=4 * np.finfo(float).eps,
                       maxiter=200)
        return self.project(base - s / t)


class WholeSpace(SimpleSet):
    def __init__(self, dim):
        if int(dim) <= 0:
            raise ContractViolation("dim must be positive")
        self.dim = int(dim)

    def __repr__(self):
        return f"WholeSpace({self.dim})"

    def contains(self, x, tol=_TOL):
        self._check(x)
        return True

    def project(self, x):
        return self._check(x).copy()

    def _power_prox(self, s, base, p):
        # ||h||^(p-1) h = -s  =>  h = -(s / ||s||) ||s||^(1/p)
        # scale first so tiny vectors do not underflow in the norm
        big = float(np.max(np.abs(s)))
        u = s / big
        un = float(np.linalg.norm(u))
        return base - (u / un) * (big * un) ** (1.0 / p)


class EuclideanBall(SimpleSet):
    is_compact = True

    def __init__(self, center, radius):
        self.center = as_vector(center, name="center")
        self.dim = self.center.size
        if not radius > 0:
            raise ContractViolation("radius must be positive")
        self.radius = float(radius)

    def __repr__(self):
        return f"EuclideanBall(center={self.center.tolist()}, radius={self.radius})"

    @property
    def diameter(self):
        return 2.0 * self.radius

    def contains(self, x, tol=_TOL):
        x = self._check(x)
        return float(np.linalg.norm(x - self.center)) <= self.radius * (1 + tol) + tol

    def project(self, x):
        x = self._check(x)
        d = x - self.center
        n = float(np.linalg.norm(d))
        if n <= self.radius:
            return x.copy()
        return self.center + d * (self.radius / n)

    def min_norm_normal(self, x, grad):
        d = self._check(x) - self.center
        n = float(np.linalg.norm(d))
        if n < self.radius * (1 - 1e-12):
            return np.zeros_like(d)
        u = d / n
        return max(0.0, -float(np.dot(grad, u))) * u

    def _power_prox(self, s, base, p):
        h, _ = minimize_power_regularized(np.zeros(self.dim), None, -s, 1.0, p,
                                          offset=self.center - base, radius=self.radius)
        return base + h


class Box(SimpleSet):
    is_compact = True

    def __init__(self, lower, upper):
        self.lower = as_vector(lower, name="lower")
        self.upper = as_vector(upper, self.lower.size, name="upper")
        if np.any(self.lower > self.upper):
            raise ContractViolation("lower must not exceed upper")
        self.dim = self.lower.size

    def __repr__(self):
        return f"Box(lower={self.lower.tolist()}, upper={self.upper.tolist()})"

    @property
    def diameter(self):
        return float(np.linalg.norm(self.upper - self.lower))

    def contains(self, x, tol=_TOL):
        x = self._check(x)
        return bool(np.all(x >= self.lower - tol) and np.all(x <= self.upper + tol))

    def project(self, x):
        return np.clip(self._check(x), self.lower, self.upper)

    def min_norm_normal(self, x, grad):
        x = self._check(x)
        grad = np.asarray(grad, float)
        v = np.zeros_like(x)
        at_lo = x <= self.lower + _TOL * (1 + np.abs(self.lower))
        at_hi = x >= self.upper - _TOL * (1 + np.abs(self.upper))
        v[at_lo] = np.minimum(0.0, -grad[at_lo])
        v[at_hi] = np.maximum(0.0, -grad[at_hi])
        return v


class ProductSet(SimpleSet):
    """Cartesian product ``first x second``; vectors are concatenated."""

    def __init__(self, first, second):
        self.first, self.second = first, second
        self.dim = first.dim + second.dim
        self.is_compact = first.is_compact and second.is_compact

    def __repr__(self):
        return f"ProductSet({self.first!r}, {self.second!r})"

    @property
    def diameter(self):
        return float(np.hypot(self.first.diameter, self.second.diameter))

    def split(self, z):
        return z[: self.first.dim], z[self.first.dim:]

    def contains(self, x, tol=_TOL):
        a, b = self.split(self._check(x))
        return self.first.contains(a, tol) and self.second.contains(b, tol)

    def project(self, x):
        a, b = self.split(self._check(x))
        return np.concatenate([self.first.project(a), self.second.project(b)])

    def min_norm_normal(self, x, grad):
        a, b = self.split(self._check(x))
        ga, gb = self.split(np.asarray(grad, float))
        return np.concatenate([self.first.min_norm_normal(a, ga),
                               self.second.min_norm_normal(b, gb)])


def set_from_dict(spec, dim):
    """Build a set from a config mapping, e.g. ``{"kind": "ball", "radius": 1}``."""
    kind = str(spec.get("kind", "whole")).lower()
    if kind in ("whole", "wholespace", "none"):
        return WholeSpace(dim)
    if kind == "ball":
        center = spec.get("center", 0.0)
        center = np.full(dim, float(center)) if np.isscalar(center) else np.asarray(center, float)
        return EuclideanBall(center, float(spec["radius"]))
    if kind == "box":
        lo, hi = spec["lower"], spec["upper"]
        lo = np.full(dim, float(lo)) if np.isscalar(lo) else np.asarray(lo, float)
        hi = np.full(dim, float(hi)) if np.isscalar(hi) else np.asarray(hi, float)
        return Box(lo, hi)
    raise ContractViolation(f"unknown set kind {kind!r}")
