"""Power-regularized quadratic subproblems reduced to scalar root finding.

Solves

    min_h  -<b, h> + 1/2 h^T M h + c / (q + 1) ||h||^(q + 1)
    s.t.   ||h - o|| <= R                        (R may be inf)

with ``M = V diag(lam) V^T`` positive semidefinite.  Stationarity reads
``(M + (c r^(q-1) + nu) I) h = b + nu o`` with ``r = ||h||`` and ball
multiplier ``nu >= 0``.  For fixed ``nu`` the shift ``t = c r^(q-1)`` is the
unique root of a decreasing scalar function; ``||h(nu) - o||`` is
nonincreasing in ``nu`` (it is the derivative of a concave dual), so the
multiplier is found by a second monotone search.
"""
from __future__ import annotations

import numpy as np
from scipy.optimize import brentq

from .exceptions import NumericalError

_EPS = np.finfo(float).eps


def _solve_shift(lam, beta, c, q, xtol_rel):
    """Root ``t`` of ``||beta / (lam + t)|| = (t / c)^(1/(q-1))``; returns ``(t, h~)``."""
    bnorm = float(np.linalg.norm(beta))
    if bnorm == 0.0:
        return 0.0, np.zeros_like(beta)
    nz = beta != 0.0

    def resid(t):
        d = lam[nz] + t
        with np.errstate(divide="ignore"):
            lhs = np.linalg.norm(beta[nz] / d)
        return lhs - (t / c) ** (1.0 / (q - 1))

    # ||h|| <= ||beta|| / t  and  t = c r^(q-1)  give  t^q <= c ||beta||^(q-1)
    t_hi = (c * bnorm ** (q - 1)) ** (1.0 / q)
    if np.min(lam[nz]) > 0.0:
        t_hi = min(t_hi, c * (bnorm / np.min(lam[nz])) ** (q - 1))
    t_hi *= 1.0 + 1e-12
    r_hi = resid(t_hi)
    if r_hi > 0.0:
        # rounding at the analytic bound; expand a little
        for _ in range(60):
            t_hi *= 2.0
            r_hi = resid(t_hi)
            if r_hi <= 0.0:
                break
        else:
            raise NumericalError("could not bracket the shift from above")
    if r_hi == 0.0:
        t = t_hi
    else:
        t_lo = 0.0
        if np.min(lam[nz]) <= 0.0 or not np.isfinite(resid(0.0)):
            t_lo = t_hi
            for _ in range(2000):
                t_lo *= 0.5
                if resid(t_lo) > 0.0:
                    break
            else:
                raise NumericalError("could not bracket the shift from below")
        t = brentq(resid, t_lo, t_hi, xtol=max(t_hi * xtol_rel, 1e-300), rtol=4 * _EPS,
                   maxiter=500)
    h = np.zeros_like(beta)
    h[nz] = beta[nz] / (lam[nz] + t)
    return t, h


def minimize_power_regularized(lam, V, b, c, q, offset=None, radius=np.inf, tol=1e-14):
    """Solve the constrained power-regularized quadratic described above.

    Parameters
    ----------
    lam, V : eigenvalues (clipped at zero) and orthonormal eigenvectors of ``M``;
        ``V=None`` means the identity basis.
    b : linear term.
    c, q : regularizer weight and power, ``q >= 2``.
    offset, radius : ball ``||h - offset|| <= radius``.

    Returns
    -------
    h : ndarray
    nu : float
        Ball multiplier (zero when the constraint is inactive).
    """
    lam = np.maximum(np.asarray(lam, dtype=float), 0.0)
    b = np.asarray(b, dtype=float)
    if V is None:
        bt = b.copy()
        to_full = lambda ht: ht  # noqa: E731
        ot = None if offset is None else np.asarray(offset, float)
    else:
        bt = V.T @ b
        to_full = lambda ht: V @ ht  # noqa: E731
        ot = None if offset is None else V.T @ np.asarray(offset, float)

    _, ht = _solve_shift(lam, bt, c, q, tol)
    if not np.isfinite(radius):
        return to_full(ht), 0.0
    if ot is None:
        ot = np.zeros_like(bt)

    def excess(nu):
        _, h_nu = _solve_shift(lam + nu, bt + nu * ot, c, q, tol)
        return float(np.linalg.norm(h_nu - ot)) - radius

    if excess(0.0) <= 0.0:
        return to_full(ht), 0.0

    nu_hi = max(1.0, float(np.linalg.norm(bt)) / max(radius, 1e-300))
    for _ in range(200):
        if excess(nu_hi) <= 0.0:
            break
        nu_hi *= 4.0
    else:
        raise NumericalError("ball multiplier not bracketed")
    nu = brentq(excess, 0.0, nu_hi, xtol=max(nu_hi * tol, 1e-300), rtol=4 * _EPS, maxiter=500)
    _, ht = _solve_shift(lam + nu, bt + nu * ot, c, q, tol)
    # snap onto the sphere; the correction is at rounding level
    d = ht - ot
    dn = np.linalg.norm(d)
    if dn > 0:
        ht = ot + d * (radius / dn)
    return to_full(ht), float(nu)
