import numpy as np
import pytest

from lae.loss import Bernoulli, GaussianMSE


def _fd_grad(loss, y, t, eps=1e-6):
    g = np.zeros_like(y, dtype=np.float64)
    for i in range(y.size):
        yp, ym = y.copy(), y.copy()
        yp.ravel()[i] += eps
        ym.ravel()[i] -= eps
        g.ravel()[i] = (loss.value(yp, t) - loss.value(ym, t)) / (2 * eps)
    return g


def _fd_hessian(loss, y, t, eps=1e-6):
    """Central differences of the analytic gradient (one FD level keeps
    the check tight enough for rel. err < 1e-5)."""
    h = np.zeros((y.size, y.size))
    for i in range(y.size):
        yp, ym = y.copy(), y.copy()
        yp.ravel()[i] += eps
        ym.ravel()[i] -= eps
        h[i] = (loss.grad(yp, t) - loss.grad(ym, t)).ravel() / (2 * eps)
    return h


def test_gaussian_value_and_grad():
    loss = GaussianMSE(1.0)
    y = np.array([[1.0, 2.0]])
    t = np.array([[0.0, 0.0]])
    assert loss.value(y, t) == pytest.approx(2.5)
    assert np.allclose(loss.grad(y, t), [[1.0, 2.0]])


def test_gaussian_sigma_scaling():
    y = np.array([[1.0, -2.0, 0.5]])
    t = np.zeros_like(y)
    base = GaussianMSE(1.0)
    scaled = GaussianMSE(2.0)
    assert scaled.value(y, t) == pytest.approx(base.value(y, t) / 4)
    assert np.allclose(scaled.output_hessian_diag(y[0]),
                       base.output_hessian_diag(y[0]) / 4)


def test_gaussian_hessian_is_scaled_identity():
    loss = GaussianMSE(0.5)
    y = np.array([0.3, -1.0])
    assert np.allclose(loss.output_hessian_diag(y), [4.0, 4.0])
    assert np.allclose(loss.output_hessian_full(y), 4.0 * np.eye(2))


@pytest.mark.parametrize("loss,t", [
    (GaussianMSE(0.7), np.array([[0.2, 0.9, 0.1]])),
    (Bernoulli(), np.array([[1.0, 0.0, 0.0]])),
])
def test_grad_matches_finite_differences(loss, t, rng):
    y = rng.normal(0, 1, (1, 3))
    g = loss.grad(y, t)
    assert np.allclose(g, _fd_grad(loss, y, t), rtol=1e-5, atol=1e-8)


def test_bernoulli_symmetric_two_class():
    m = Bernoulli().output_hessian_full(np.array([0.0, 0.0]))
    assert np.allclose(m, [[0.25, -0.25], [-0.25, 0.25]])


def test_bernoulli_hessian_matches_finite_differences(rng):
    loss = Bernoulli()
    y = rng.normal(0, 1, (1, 4))
    t = np.array([[0.0, 1.0, 0.0, 0.0]])
    full = loss.output_hessian_full(y[0])
    assert np.allclose(full, _fd_hessian(loss, y, t).reshape(4, 4),
                       rtol=1e-5, atol=1e-6)
    assert np.allclose(np.diag(full), loss.output_hessian_diag(y[0]))


def test_gaussian_hessian_matches_finite_differences(rng):
    loss = GaussianMSE(1.3)
    y = rng.normal(0, 1, (1, 3))
    t = rng.normal(0, 1, (1, 3))
    assert np.allclose(loss.output_hessian_full(y[0]),
                       _fd_hessian(loss, y, t).reshape(3, 3),
                       rtol=1e-4, atol=1e-6)


def test_bernoulli_hessian_independent_of_targets(rng):
    # the softmax Hessian depends on logits only
    loss = Bernoulli()
    y = rng.normal(0, 1, (1, 3))
    h1 = _fd_hessian(loss, y, np.array([[1.0, 0.0, 0.0]]))
    h2 = _fd_hessian(loss, y, np.array([[0.0, 0.0, 1.0]]))
    assert np.allclose(h1, h2, atol=1e-6)


def test_sigma_must_be_positive():
    with pytest.raises(ValueError):
        GaussianMSE(0.0)
