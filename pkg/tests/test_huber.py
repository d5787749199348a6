import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from bilevel_huber.huber import energy_huber_tv, huber_eval, huber_from_norm, huber_gradient, lower_energy
from bilevel_huber.operators import grad_forward, hessian, pointwise_norm


def test_branch_boundary():
    assert huber_eval(2.0, [2.0, 0.0]) == pytest.approx(1.0)
    assert huber_eval(2.0, [0.0, 2.0 - 1e-15]) == pytest.approx(1.0)


def test_zero_input():
    assert huber_eval(1.0, [0.0, 0.0]) == 0.0


def test_linear_branch():
    assert huber_eval(0.5, [3.0, 0.0]) == pytest.approx(2.75)
    assert huber_eval(0.5, np.array([[0.0, 3.0], [0.0, 0.0]])) == pytest.approx(2.75)


def test_gamma_zero_is_norm():
    assert huber_eval(0.0, [3.0, 4.0]) == 5.0
    assert huber_eval(1e-13, [0.0, 1e-14]) == pytest.approx(1e-14)


def test_negative_gamma_rejected():
    with pytest.raises(ValueError):
        huber_from_norm(np.ones(3), -1.0)


@given(
    gamma=st.floats(0, 10),
    z=st.lists(st.floats(-100, 100), min_size=2, max_size=4),
)
def test_sandwich(gamma, z):
    n = np.linalg.norm(z)
    f = huber_eval(gamma, z)
    assert n - gamma / 2 - 1e-12 <= f <= n + 1e-12


@given(gamma=st.floats(1e-3, 10), angle=st.floats(0, 2 * np.pi))
def test_seam_continuity(gamma, angle):
    z = gamma * np.array([np.cos(angle), np.sin(angle)])
    eps = 1e-10
    inner, outer = z * (1 - eps), z * (1 + eps)
    assert abs(huber_eval(gamma, inner) - huber_eval(gamma, outer)) <= 1e-9 * max(1.0, gamma)
    gi, go = huber_gradient(gamma, inner), huber_gradient(gamma, outer)
    assert np.linalg.norm(gi - go) <= 1e-9
    assert np.linalg.norm(huber_gradient(gamma, z)) == pytest.approx(1.0)


def test_recession_function():
    z = np.array([0.3, -0.4])
    for t in (1e2, 1e4, 1e8):
        assert huber_eval(0.7, t * z) / t == pytest.approx(0.5, rel=1.0 / t)


@pytest.mark.parametrize("order", [1, 2])
def test_energy_constant_image(order):
    assert energy_huber_tv(np.full((6, 6), 0.4), 1.0, 0.1, order) == 0.0


def test_energy_tv_limit(rng):
    u = rng.random((8, 8))
    alpha = rng.random((8, 8)) + 0.1
    expected = np.sum(alpha * pointwise_norm(grad_forward(u)))
    assert energy_huber_tv(u, alpha, 0.0, 1) == pytest.approx(expected, rel=1e-15)


@pytest.mark.parametrize("order", [1, 2])
def test_energy_sandwich(rng, order):
    u = rng.random((8, 8))
    alpha = rng.random((8, 8)) + 0.1
    gamma = 0.5 * rng.random((8, 8))
    norm = pointwise_norm(grad_forward(u) if order == 1 else hessian(u))
    e = energy_huber_tv(u, alpha, gamma, order)
    assert np.sum(alpha * (norm - gamma.max() / 2)) <= e <= np.sum(alpha * norm)


def test_energy_grid_mismatch():
    with pytest.raises(ValueError):
        energy_huber_tv(np.zeros((4, 4)), np.ones((3, 4)), 0.1, 1)
    with pytest.raises(ValueError):
        lower_energy(np.zeros((4, 4)), np.zeros((4, 5)), 1.0, 0.1, 1)
