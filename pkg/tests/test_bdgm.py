import math

import numpy as np
import pytest
from scipy.optimize import minimize

from conftest import recheck_exit
from mixtensor.bdgm import (KAPPA, BdgmConfig, BdgmWorkspace, bdgm_delta, bdgm_solve,
                            bregman_step, listen_exits)
from mixtensor.exceptions import ContractViolation, ConvergenceFailure
from mixtensor.model import SecondOrderOracle, TensorStepModel
from mixtensor.secular import minimize_power_regularized
from mixtensor.zoo import make_instance

L3_QUARTIC = 6.0


def quartic():
    def fg(y):
        r2 = float(y @ y)
        return 0.25 * r2 * r2 + 0.5 * r2, (r2 + 1.0) * y

    def hess(y):
        return (float(y @ y) + 1.0) * np.eye(y.size) + 2.0 * np.outer(y, y)

    def third(y, h):
        return 2.0 * float(h @ h) * y + 4.0 * float(y @ h) * h

    return SecondOrderOracle(fg, hess, 2), third


def model_minimizer(orc, third, y_hat, L3):
    """Brute-force minimizer of the assembled model by Newton-type BFGS."""
    m = TensorStepModel.build(orc, y_hat, H=6.0 * L3)
    t3 = lambda h: third(y_hat, h)
    res = minimize(lambda y: m.exact_value(y, t3), y_hat, jac=lambda y: m.exact_gradient(y, t3),
                   method="BFGS", options={"gtol": 1e-13, "maxiter": 10000})
    return res.x, m, t3


def test_config_validation():
    with pytest.raises(ContractViolation):
        BdgmConfig(delta=0.0)
    with pytest.raises(ContractViolation):
        BdgmConfig(max_iters=0)


def test_delta_rule():
    assert bdgm_delta(1e-4, 4.0, 0.0, 1.0) == pytest.approx(1e-6 / 2.0)
    assert bdgm_delta(1e-4, 1.0, 4.0, 4.0, constant=3.0) == pytest.approx(3e-6 / (1.0 + 4.0))


def test_workspace_radius_and_psd_check():
    orc, _ = quartic()
    y = np.array([1.0, 0.0])
    f, g = orc(y)
    ws = BdgmWorkspace.build(y, g, orc.hessian(y), L3_QUARTIC)
    assert ws.radius == pytest.approx(2.0 * ((2 + math.sqrt(2)) * 2.0 / 6.0) ** (1 / 3))
    assert ws.kappa == pytest.approx(2 * (1 + 1 / math.sqrt(2)))
    with pytest.raises(ContractViolation):
        BdgmWorkspace.build(y, g, -np.eye(2), L3_QUARTIC)


def test_stationary_anchor_returns_immediately():
    orc, _ = quartic()
    res = bdgm_solve(orc, np.zeros(2), L3_QUARTIC, 1e-8, full_output=True)
    assert res.reason == "anchor" and np.array_equal(res.z, np.zeros(2))
    assert orc.hess_calls == 1


def test_quadratic_satisfies_stopping_test(rng):
    M = rng.standard_normal((4, 4))
    A = M @ M.T + 0.5 * np.eye(4)
    b = rng.standard_normal(4)
    orc = SecondOrderOracle(lambda y: (0.5 * y @ A @ y + b @ y, A @ y + b), lambda y: A, 4)
    y_hat = rng.standard_normal(4)
    res = bdgm_solve(orc, y_hat, 1.0, 1e-10, full_output=True)
    _, gz = orc(res.z)
    assert res.residual <= np.linalg.norm(gz) / 6.0 - res.delta or res.residual <= res.delta
    # the surrogate is exact here, so the analytic model gradient matches the residual
    m = TensorStepModel.build(orc, y_hat, H=6.0)
    exact = m.exact_gradient(res.z, lambda h: np.zeros(4))
    assert np.linalg.norm(exact) == pytest.approx(res.residual, rel=1e-6, abs=1e-12)


def test_quartic_output_near_model_minimizer():
    orc, third = quartic()
    y_hat = np.array([1.0, 0.0])
    z_star, m, t3 = model_minimizer(orc, third, y_hat, L3_QUARTIC)
    res = bdgm_solve(orc, y_hat, L3_QUARTIC, 1e-8, full_output=True)
    # the model is 1-strongly convex here (its Hessian dominates the identity part)
    w = np.linalg.eigvalsh(m.hess)[0]
    g_model = np.linalg.norm(m.exact_gradient(res.z, t3))
    assert np.linalg.norm(res.z - z_star) <= g_model / w + 1e-10
    assert g_model <= np.linalg.norm(orc(res.z)[1]) / 6.0 + 2.0 * res.delta


def test_bregman_iteration_converges_to_model_minimizer():
    # repeating the step with exact model gradients drives z to the minimizer
    orc, third = quartic()
    y_hat = np.array([1.0, 0.0])
    z_star, m, t3 = model_minimizer(orc, third, y_hat, L3_QUARTIC)
    ws = BdgmWorkspace.build(y_hat, m.grad, m.hess, L3_QUARTIC)
    z = y_hat.copy()
    for _ in range(300):
        z = bregman_step(ws, z, m.exact_gradient(z, t3))
    assert np.linalg.norm(z - z_star) <= 1e-6


def test_bregman_step_zero_direction_keeps_point():
    orc, _ = quartic()
    y_hat = np.array([0.5, 0.5])
    _, g = orc(y_hat)
    ws = BdgmWorkspace.build(y_hat, g, orc.hessian(y_hat), L3_QUARTIC)
    z = y_hat + np.array([0.1, -0.2])
    assert np.allclose(bregman_step(ws, z, np.zeros(2)), z, atol=1e-12)


def test_bregman_step_cardano():
    # A = I in 1-D: kappa (h + L3 h^3) = b, a depressed cubic
    L3 = 2.0
    ws = BdgmWorkspace.build(np.zeros(1), np.array([5.0]), np.eye(1), L3)
    z_k, g = np.array([0.3]), np.array([-4.0])
    b = KAPPA * (z_k[0] + L3 * z_k[0] ** 3) - g[0]
    p, q = 1.0 / L3, -b / (KAPPA * L3)
    disc = math.sqrt(q * q / 4 + p**3 / 27)
    root = np.cbrt(-q / 2 + disc) + np.cbrt(-q / 2 - disc)
    assert abs(root) < ws.radius
    assert bregman_step(ws, z_k, g)[0] == pytest.approx(root, rel=1e-12)


def test_bregman_step_on_boundary(rng):
    orc, _ = quartic()
    y_hat = np.array([1.0, 0.5])
    _, g0 = orc(y_hat)
    ws = BdgmWorkspace.build(y_hat, g0, orc.hessian(y_hat), L3_QUARTIC)
    g = np.array([30.0, -20.0])
    free = bregman_step(ws, y_hat, g)
    ws.radius = 0.5 * np.linalg.norm(free - y_hat)
    z = bregman_step(ws, y_hat, g)
    assert np.linalg.norm(z - y_hat) == pytest.approx(ws.radius, abs=1e-10)

    # brute force: projected gradient on the same objective
    def obj_grad(u):
        return g + KAPPA * (ws.rho_grad(u) - ws.rho_grad(y_hat))

    u = y_hat.copy()
    for _ in range(20000):
        u = u - 1e-3 * obj_grad(u)
        d = u - y_hat
        n = np.linalg.norm(d)
        if n > ws.radius:
            u = y_hat + d * ws.radius / n
    assert np.linalg.norm(u - z) <= 1e-6


def test_secular_ball_multiplier_enters_diagonal():
    # min -<b,h> + 1/4 |h|^4 over |h| <= 1 with |b| large: h = b/|b|
    h, nu = minimize_power_regularized(np.zeros(2), None, np.array([8.0, 0.0]), 1.0, 3,
                                       radius=1.0)
    assert np.allclose(h, [1.0, 0.0]) and nu == pytest.approx(7.0)


def test_hessian_economy_and_gradient_count():
    orc, _ = quartic()
    y_hat = np.array([1.0, -1.0])
    res = bdgm_solve(orc, y_hat, L3_QUARTIC, 1e-9, full_output=True)
    assert orc.hess_calls == 1
    assert orc.grad_calls == 1 + 3 * res.iterations
    orc2, _ = quartic()
    f, g = orc2(y_hat)
    res2 = bdgm_solve(orc2, y_hat, L3_QUARTIC, 1e-9, value=f, grad=g, full_output=True)
    assert orc2.grad_calls == 1 + 3 * res2.iterations


def test_max_iters_raises_with_residuals():
    orc, _ = quartic()
    with pytest.raises(ConvergenceFailure) as err:
        bdgm_solve(orc, np.array([3.0, 1.0]), L3_QUARTIC, 1e-12, config=BdgmConfig(max_iters=1))
    assert "residual" in err.value.info


@pytest.fixture(scope="module")
def zoo_inner():
    prob = make_instance(1, 16, 16, sigma=1.0, r_x=0.2, y_scale=0.1)
    return prob


def test_zoo_certificate_with_analytic_third(zoo_inner):
    prob = zoo_inner
    seen = []

    def check(result, ws, oracle):
        seen.append(recheck_exit(result, ws, oracle, third=lambda h: prob.third_yy(ws.anchor, h)))

    rng = np.random.default_rng(3)
    with listen_exits(check):
        for _ in range(5):
            orc = prob.inner_oracle(rng.standard_normal(16) * 0.1)
            bdgm_solve(orc, rng.standard_normal(16) * 0.5, prob.L3_y, eps=1e-6)
    assert len(seen) == 5
    assert all(lhs <= rhs for lhs, rhs in seen)


def test_zoo_iterations_grow_slowly_and_residual_decays(zoo_inner):
    prob = zoo_inner
    y_hat = np.full(16, 0.5)
    its = {}
    for eps in (1e-2, 1e-4, 1e-6, 1e-8):
        res = bdgm_solve(prob.inner_oracle(np.zeros(16)), y_hat, prob.L3_y, eps=eps,
                         full_output=True)
        its[eps] = res.iterations
        r = np.array([h["residual"] for h in res.history])
        if len(r) > 2:
            assert np.polyfit(np.arange(len(r)), np.log(r), 1)[0] < 0
    # at most linear growth in log(1/eps)
    for eps, k in its.items():
        assert k <= its[1e-2] + 5 * math.log10(1e-2 / eps)


def test_model_value_decreases_along_iterates(zoo_inner):
    prob = zoo_inner
    y_hat = np.full(16, 0.5)
    orc = prob.inner_oracle(np.zeros(16))
    res = bdgm_solve(orc, y_hat, prob.L3_y, 1e-9, full_output=True)
    m = TensorStepModel.build(prob.inner_oracle(np.zeros(16)), y_hat, H=6.0 * prob.L3_y)
    t3 = lambda h: prob.third_yy(y_hat, h)
    vals = [m.exact_value(h["z"], t3) for h in res.history]
    assert len(vals) >= 2
    assert all(b < a for a, b in zip(vals, vals[1:]))
