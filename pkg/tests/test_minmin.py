import json
import math

import numpy as np
import pytest

from mixtensor.exceptions import ConfigurationError, ContractViolation
from mixtensor.minmin import (MinMinProblem, _inner_solve, delta_compact, delta_max_for_outer,
                              delta_unconstrained, eps_tilde_for_delta, eps_tilde_for_target,
                              estimate_D, joint_fgm_solve, minmin_solve, mixed_oracle_eval)
from mixtensor.model import check_delta_L_oracle
from mixtensor.zoo import make_instance, reference_solve


def wrap(seed=1, m=16, n=8, **kw):
    kw.setdefault("r_x", 0.2)
    kw.setdefault("y_scale", 0.1)
    zp = make_instance(seed, m, n, **kw)
    _, _, F_star = reference_solve(zp)
    return zp, MinMinProblem.from_zoo(zp, F_star=F_star)


# ----- accuracy formulas -------------------------------------------------------------

def test_delta_unconstrained_examples():
    assert delta_unconstrained(0.25, 2.0, 1.0, 1.0) == pytest.approx(5.0)
    assert delta_unconstrained(0.0, 2.0, 1.0, 1.0) == 0.0
    assert delta_unconstrained(1e-30, 2.0, 1.0, 1.0) < 1e-13
    grid = np.logspace(-12, 0, 25)
    vals = [delta_unconstrained(e, 3.0, 0.5, 0.7) for e in grid]
    assert all(b > a for a, b in zip(vals, vals[1:]))
    with pytest.raises(ContractViolation):
        delta_unconstrained(-1.0, 2.0, 1.0, 1.0)


def test_delta_compact_examples():
    assert delta_compact(0.02, 6.0, 1 / 3, 1.0, 0.02, 3) == pytest.approx(0.2304)
    floor = 6.0 / (2 / 3) * (2 * 0.02 / 1.0) ** 2
    assert delta_compact(0.0, 6.0, 1 / 3, 1.0, 0.02, 3) == pytest.approx(floor)
    grid = np.logspace(-12, 0, 25)
    vals = [delta_compact(e, 6.0, 1 / 3, 1.0, 0.02) for e in grid]
    assert all(b > a for a, b in zip(vals, vals[1:]))
    with pytest.raises(ContractViolation):
        delta_compact(0.1, 6.0, 0.5, 1.0, 0.02)


def test_delta_max_example():
    assert delta_max_for_outer(1.0, 5.0, 1.0) == pytest.approx(1.0 / 130.0)


def test_eps_tilde_inversion_unconstrained():
    d_max = delta_max_for_outer(1.0, 5.0, 1.0)
    c0 = {"L_y": 4.0, "mu_y": 0.5, "D": 0.0}
    assert eps_tilde_for_target({"mu_x": 1.0, "L_xy": 5.0, "R_x": 1.0}, "unconstrained", c0) == \
        pytest.approx(0.5 * d_max / 8.0, rel=1e-12)
    zp, prob = wrap()
    c = prob.delta_constants()
    for target in (1e-2, 1e-6, 1e-10):
        e = eps_tilde_for_delta(target, "unconstrained", c)
        assert delta_unconstrained(e, c["L_y"], c["mu_y"], c["D"]) <= target
        assert delta_unconstrained(1.01 * e, c["L_y"], c["mu_y"], c["D"]) > target


def test_eps_tilde_inversion_compact_and_floor():
    c = {"H": 6.0, "gamma": 1 / 3, "mu_y": 1.0, "D": 0.02, "p": 3}
    e = eps_tilde_for_delta(0.2304, "compact", c)
    assert e == pytest.approx(0.02, rel=1e-10)
    assert delta_compact(e, **{k: c[k] for k in ("H", "gamma", "mu_y", "D")}) <= 0.2304
    floor = delta_compact(0.0, 6.0, 1 / 3, 1.0, 0.02)
    with pytest.raises(ConfigurationError, match="floor"):
        eps_tilde_for_delta(0.5 * floor, "compact", c)


# ----- problem wrapper ---------------------------------------------------------------

def test_from_zoo_D_bounds_the_inner_gap():
    zp, prob = wrap(seed=2)
    rng = np.random.default_rng(0)
    for _ in range(10):
        x = zp.Q_x.project(rng.standard_normal(zp.m))
        y = zp.inner_solution(x)
        assert zp.value(x, np.zeros(zp.n)) - zp.value(x, y) <= prob.D
    est = estimate_D(prob, samples=8)
    assert 0 < est


def test_problem_contracts_and_convexity_check():
    zp, prob = wrap()
    assert prob.variant == "unconstrained" and prob.m == 16 and prob.n == 8
    assert prob.spot_check_convexity() >= -1e-9
    with pytest.raises(ContractViolation):
        MinMinProblem(value=prob.value, grad=prob.grad, hess_yy=prob.hess_yy, Q_x=prob.Q_y,
                      Q_y=prob.Q_y, spec=prob.spec)


# ----- mixed oracle ---------------------------------------------------------------------

def test_mixed_oracle_matches_closed_form_on_quadratic():
    zp, prob = wrap(seed=3, sigma=0.0)
    rng = np.random.default_rng(1)
    e = 1e-8
    for _ in range(5):
        x = zp.Q_x.project(rng.standard_normal(zp.m) * 0.1)
        rec = mixed_oracle_eval(prob, x, e)
        y_x = -np.linalg.solve(zp.B, zp.C.T @ x + zp.c)
        grad_f = zp.A @ x + zp.b + zp.C @ y_x
        assert np.linalg.norm(rec.g_delta - grad_f) <= np.linalg.norm(zp.C, 2) * math.sqrt(
            2 * e / zp.mu_y) * (1 + 1e-9)
        assert rec.delta == pytest.approx(delta_unconstrained(e, zp.L_y, zp.mu_y, prob.D))
        assert rec.F_value == pytest.approx(rec.f_delta + 2 * rec.delta)


def test_mixed_oracle_is_delta_L_oracle():
    zp, prob = wrap(seed=1)
    rng = np.random.default_rng(2)
    exact = lambda z: prob.outer_value(z)[0]
    for _ in range(3):
        x = zp.Q_x.project(rng.standard_normal(zp.m))
        rec = mixed_oracle_eval(prob, x, 1e-6)
        probes = [zp.Q_x.project(x + 0.1 * rng.standard_normal(zp.m)) for _ in range(50)]
        assert check_delta_L_oracle(exact, rec.as_inexact(), x, probes)


def test_mixed_oracle_slack_shrinks_with_eps():
    zp, prob = wrap(seed=1)
    x = zp.Q_x.project(np.ones(zp.m))
    f_true = prob.outer_value(x)[0]
    slack = [f_true - mixed_oracle_eval(prob, x, e).f_delta for e in (1e-4, 5e-5, 2.5e-5)]
    assert all(s >= 0 for s in slack)
    assert slack[0] > slack[1] > slack[2]


def test_mixed_oracle_contracts():
    zp, prob = wrap()
    with pytest.raises(ContractViolation):
        mixed_oracle_eval(prob, np.ones(zp.m), 1e-6)
    with pytest.raises(ContractViolation):
        mixed_oracle_eval(prob, np.zeros(zp.m), 0.0)


def test_inner_answer_is_nearly_optimal_against_any_point():
    zp, prob = wrap(seed=4)
    rng = np.random.default_rng(3)
    x = zp.Q_x.project(rng.standard_normal(zp.m))
    e = 1e-6
    y_e, _, _ = _inner_solve(prob, x, e, np.zeros(zp.n))
    g = zp.grad(x, y_e)[1]
    for _ in range(100):
        y = rng.standard_normal(zp.n)
        d = np.linalg.norm(y_e - y)
        assert g @ (y_e - y) <= zp.L_y * d * math.sqrt(2 * e / zp.mu_y) + 1e-15


def test_oracle_gradient_lipschitz_on_pairs():
    zp, prob = wrap(seed=5)
    rng = np.random.default_rng(4)
    e = 1e-8
    slack = 10 * math.sqrt(2 * e / zp.mu_y) * zp.L_xy
    for _ in range(10):
        x1, x2 = (zp.Q_x.project(rng.standard_normal(zp.m)) for _ in range(2))
        g1 = mixed_oracle_eval(prob, x1, e).g_delta
        g2 = mixed_oracle_eval(prob, x2, e).g_delta
        assert np.linalg.norm(g1 - g2) <= zp.L_xy * np.linalg.norm(x1 - x2) + slack


def test_warm_start_does_not_increase_stages():
    diffs = []
    for seed in range(1, 6):
        zp, prob = wrap(seed=seed)
        c = prob.delta_constants()
        d = zp.x_c / np.linalg.norm(zp.x_c)
        y_prev, warm, cold = None, 0, 0
        for t in np.linspace(-0.09, 0.09, 8):
            x = t * d
            rec_w = mixed_oracle_eval(prob, x, 1e-10, warm_start=y_prev, constants=c)
            rec_c = mixed_oracle_eval(prob, x, 1e-10, constants=c)
            warm += rec_w.inner_stages
            cold += rec_c.inner_stages
            y_prev = rec_w.y_eps
        diffs.append(warm - cold)
    assert np.median(diffs) <= 0


# ----- drivers ----------------------------------------------------------------------------

def test_minmin_solve_reaches_eps_and_reports():
    zp, prob = wrap(seed=1)
    trace = []
    x, y, rep = minmin_solve(prob, np.zeros(zp.m), np.zeros(zp.n), 1e-5, trace=trace)
    assert rep.final_gap <= 1e-5
    assert zp.Q_x.contains(x, 1e-12)
    assert rep.outer_grad_calls == len(trace) > 0
    assert rep.stages == rep.stages_planned
    d = json.loads(rep.to_json())
    assert set(d) == {"outer_grad_calls", "inner_grad_calls", "inner_hess_calls", "stages",
                      "final_gap", "wall_ms"}
    assert rep.weighted_cost(16, 8) == (rep.outer_grad_calls * 16 + rep.inner_grad_calls * 8
                                        + rep.inner_hess_calls * 64)
    # per-stage inner targets tighten as the stage radius shrinks
    assert all(b < a for a, b in zip(rep.eps_tilde, rep.eps_tilde[1:]))


def test_minmin_fixed_mode():
    zp, prob = wrap(seed=2)
    _, _, rep = minmin_solve(prob, np.zeros(zp.m), np.zeros(zp.n), 1e-5, mode="fixed")
    assert rep.final_gap <= 1e-5
    assert len(set(rep.eps_tilde)) == 1
    with pytest.raises(ContractViolation):
        minmin_solve(prob, np.zeros(zp.m), np.zeros(zp.n), 1e-5, mode="adaptive")


def test_minmin_compact_floor_raises_before_any_call():
    zp, prob = wrap(seed=1, r_y=0.5, sigma=1.0)
    calls = []
    inner = prob.inner_oracle
    prob.inner_oracle = lambda x: calls.append(x) or inner(x)
    with pytest.raises(ConfigurationError):
        minmin_solve(prob, np.zeros(zp.m), np.zeros(zp.n), 1e-5)
    assert calls == []


def test_minmin_decoupled_matches_outer_only_solution():
    zp, prob = wrap(seed=3, coupling_scale=0.0)
    x_star, y_star, _ = reference_solve(zp)
    x, y, rep = minmin_solve(prob, np.zeros(zp.m), np.zeros(zp.n), 1e-8)
    # the outer problem alone is 1/2 x'Sx + b'x on Q_x
    assert np.linalg.norm(x - x_star) <= math.sqrt(2 * 1e-8 / zp.mu_x)
    assert np.linalg.norm(y - y_star) <= math.sqrt(2 * 1e-8 / zp.mu_y)


def test_joint_fgm_baseline():
    zp, prob = wrap(seed=1)
    trace = []
    x, y, rep = joint_fgm_solve(prob, np.zeros(zp.m), np.zeros(zp.n), 1e-6, trace=trace)
    assert rep.final_gap <= 1e-6
    assert rep.inner_grad_calls == 0 and rep.outer_grad_calls == len(trace)
    bare = MinMinProblem(value=prob.value, grad=prob.grad, hess_yy=prob.hess_yy, Q_x=prob.Q_x,
                         Q_y=prob.Q_y, spec=prob.spec)
    with pytest.raises(ConfigurationError):
        joint_fgm_solve(bare, np.zeros(zp.m), np.zeros(zp.n), 1e-6)
