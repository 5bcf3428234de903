import numpy as np
import pytest

from lanecast.errors import ConfigError, ShapeError
from lanecast.optim import RmsProp


def test_zero_gradient_leaves_params_but_decays_accumulator():
    opt = RmsProp(learning_rate=0.01, rho=0.9)
    params = {"w": np.array([1.0, -2.0])}
    opt.step(params, {"w": np.array([3.0, 4.0])})
    acc_before = opt.accumulators["w"].copy()
    values_before = params["w"].copy()
    opt.step(params, {"w": np.zeros(2)})
    assert np.array_equal(params["w"], values_before)
    assert np.allclose(opt.accumulators["w"], 0.9 * acc_before)


def test_closed_form_single_step():
    # v = 0, g = 1, rho = 0.9  ->  v = 0.1, step = -lr / (sqrt(0.1) + eps)
    opt = RmsProp(learning_rate=0.001, rho=0.9, epsilon=1e-8)
    params = {"w": np.array([0.0])}
    opt.step(params, {"w": np.array([1.0])})
    assert opt.accumulators["w"][0] == pytest.approx(0.1, rel=1e-15)
    assert params["w"][0] == pytest.approx(-0.0031623, abs=1e-7)


def test_accumulator_recurrence_identity():
    rho = 0.8
    opt = RmsProp(learning_rate=0.01, rho=rho)
    g = np.array([0.5, -1.5, 2.0])
    params = {"w": np.zeros(3)}
    opt.step(params, {"w": g})
    v1 = opt.accumulators["w"].copy()
    opt.step(params, {"w": g})
    expected = rho * v1 + (1.0 - rho) * np.square(g)
    assert np.array_equal(opt.accumulators["w"], expected)


def test_shape_mismatch_rejected():
    opt = RmsProp(learning_rate=0.01)
    with pytest.raises(ShapeError):
        opt.step({"w": np.zeros(3)}, {"w": np.zeros(4)})
    with pytest.raises(ShapeError):
        opt.step({"w": np.zeros(3)}, {})


def test_invalid_constants_rejected():
    with pytest.raises(ConfigError):
        RmsProp(learning_rate=0.0)
    with pytest.raises(ConfigError):
        RmsProp(learning_rate=0.1, rho=1.0)
    with pytest.raises(ConfigError):
        RmsProp(learning_rate=0.1, epsilon=0.0)


def test_deterministic_across_instances():
    g = np.array([0.3, -0.7])
    runs = []
    for _ in range(2):
        opt = RmsProp(learning_rate=0.05, rho=0.9)
        params = {"w": np.array([1.0, 1.0])}
        for _ in range(5):
            opt.step(params, {"w": g})
        runs.append(params["w"].copy())
    assert np.array_equal(runs[0], runs[1])
