import numpy as np

from lanecast.gradcheck import gradient_check
from lanecast.layers import DenseParams, dense_backward, dense_forward
from lanecast.losses import speed_loss


def _dense_setup(seed=31):
    rng = np.random.default_rng(seed)
    params = DenseParams(rng.standard_normal((4, 6)), rng.standard_normal(4))
    x = rng.standard_normal(6)
    target = rng.standard_normal(4)
    return params, x, target


def _dense_grads(params, x, target):
    pred = dense_forward(x, params)
    loss, grad_pred = speed_loss(pred, target)
    _, grad_w, grad_b = dense_backward(x, params, grad_pred)
    return loss, grad_w, grad_b


def test_dense_layer_plus_loss_passes():
    params, x, target = _dense_setup()

    def loss_fn():
        return speed_loss(dense_forward(x, params), target)[0]

    _, grad_w, grad_b = _dense_grads(params, x, target)
    report = gradient_check(
        loss_fn,
        {"weights": params.weights, "biases": params.biases},
        {"weights": grad_w, "biases": grad_b},
        step=1e-6,
        tolerance=1e-7,
    )
    assert report.passed, report.summary()
    assert report.worst < 1e-7


def test_corrupted_gradient_is_caught():
    params, x, target = _dense_setup()

    def loss_fn():
        return speed_loss(dense_forward(x, params), target)[0]

    _, grad_w, grad_b = _dense_grads(params, x, target)
    grad_w = grad_w.copy()
    grad_w.flat[3] *= 2.0  # one corrupted entry must flunk the whole check
    report = gradient_check(
        loss_fn,
        {"weights": params.weights, "biases": params.biases},
        {"weights": grad_w, "biases": grad_b},
        step=1e-6,
        tolerance=1e-7,
    )
    assert not report.passed
    assert report.max_rel_error["weights"] > 1e-2


def test_subset_probing_covers_every_array():
    params, x, target = _dense_setup()

    def loss_fn():
        return speed_loss(dense_forward(x, params), target)[0]

    _, grad_w, grad_b = _dense_grads(params, x, target)
    report = gradient_check(
        loss_fn,
        {"weights": params.weights, "biases": params.biases},
        {"weights": grad_w, "biases": grad_b},
        step=1e-6,
        tolerance=1e-7,
        rng=np.random.default_rng(0),
        max_entries=5,
    )
    assert set(report.max_rel_error) == {"weights", "biases"}
    assert report.passed


def test_params_restored_after_probing():
    params, x, target = _dense_setup()
    snapshot = params.weights.copy()

    def loss_fn():
        return speed_loss(dense_forward(x, params), target)[0]

    _, grad_w, grad_b = _dense_grads(params, x, target)
    gradient_check(
        loss_fn,
        {"weights": params.weights},
        {"weights": grad_w},
        step=1e-6,
        tolerance=1e-6,
    )
    assert np.array_equal(params.weights, snapshot)
