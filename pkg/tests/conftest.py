import numpy as np
import pytest

from mixtensor.bdgm import listen_exits
from mixtensor.model import FirstOrderOracle, TensorStepModel, model_gradient

# every BDGM exit of the session, rechecked independently of the solver
_EXITS = {"count": 0, "violations": []}


def recheck_exit(result, ws, oracle, third=None):
    """Return ``(lhs, rhs)`` of ``||grad Omega(z)|| <= ||grad f(z)||/6 + 2 delta``.

    The model gradient is rebuilt from the anchor data: with the analytic
    third derivative when ``third`` is given, otherwise with the difference
    surrogate at the step the solver used.  A non-counting copy of the
    oracle keeps the call tallies untouched.
    """
    quiet = FirstOrderOracle(oracle._fun_and_grad, oracle.dim)
    model = TensorStepModel(anchor=ws.anchor, H=6.0 * ws.L3, value=0.0, grad=ws.grad,
                            hess=ws.hess)
    z = result.z
    _, gz = quiet(z)
    if third is not None:
        gm = model.exact_gradient(z, third)
    elif np.isnan(result.tau):
        gm = model.grad.copy()
    else:
        gm = model_gradient(model, quiet, z, result.tau)
    return float(np.linalg.norm(gm)), float(np.linalg.norm(gz)) / 6.0 + 2.0 * result.delta


def _watch(result, ws, oracle):
    _EXITS["count"] += 1
    lhs, rhs = recheck_exit(result, ws, oracle)
    if lhs > rhs:
        _EXITS["violations"].append((result.reason, lhs, rhs))


@pytest.fixture(scope="session", autouse=True)
def _bdgm_watch():
    with listen_exits(_watch):
        yield


@pytest.fixture
def bdgm_exits():
    return _EXITS


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
