import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bilevel_huber.operators import div2, div_backward, grad_forward, hessian, laplacian_neumann


def _dense(op, shape, out_len):
    n = shape[0] * shape[1]
    cols = []
    for k in range(n):
        e = np.zeros(n)
        e[k] = 1.0
        cols.append(op(e.reshape(shape)).ravel())
    return np.array(cols).T.reshape(out_len, n)


def test_grad_two_pixel_example():
    g = grad_forward(np.array([[0.0, 1.0]]))
    np.testing.assert_array_equal(g[0], [[1.0, 0.0]])
    np.testing.assert_array_equal(g[1], [[0.0, 0.0]])


def test_grad_of_constant_is_zero():
    assert np.all(grad_forward(np.full((5, 7), 3.3)) == 0)


def test_div_two_pixel_example():
    # <grad u, p> = -<u, div p> with p_x = [1, 1]: grad u = (u1 - u0, 0)
    # so <grad u, p> = u1 - u0 and div p = [1, -1]
    p = np.zeros((2, 1, 2))
    p[0] = [[1.0, 1.0]]
    np.testing.assert_array_equal(div_backward(p), [[1.0, -1.0]])


def test_div_of_zero():
    assert np.all(div_backward(np.zeros((2, 4, 3))) == 0)


@pytest.mark.parametrize("shape", [(8, 8), (16, 16), (5, 9)])
def test_grad_div_adjoint(rng, shape):
    u = rng.standard_normal(shape)
    p = rng.standard_normal((2,) + shape)
    lhs = np.sum(grad_forward(u) * p)
    rhs = -np.sum(u * div_backward(p))
    assert abs(lhs - rhs) <= 1e-12 * abs(lhs)


def test_hessian_kills_affine():
    i, j = np.mgrid[0:9, 0:11]
    u = 0.3 * i - 1.7 * j + 2.0
    np.testing.assert_allclose(hessian(u), 0.0, atol=1e-12)


def test_hessian_of_quadratic_strip():
    j = np.arange(10.0)
    h = hessian((j**2)[None, :])
    np.testing.assert_allclose(h[0, 0, 1:-1], 2.0)
    i = np.arange(7.0)
    h = hessian((i**2)[:, None])
    np.testing.assert_allclose(h[3, 1:-1, 0], 2.0)


@pytest.mark.parametrize("shape", [(8, 8), (6, 10)])
def test_hessian_div2_adjoint(rng, shape):
    u = rng.standard_normal(shape)
    q = rng.standard_normal((4,) + shape)
    lhs = np.sum(hessian(u) * q)
    rhs = np.sum(u * div2(q))
    assert abs(lhs - rhs) <= 1e-12 * abs(lhs)


def test_div2_of_zero():
    assert np.all(div2(np.zeros((4, 5, 5))) == 0)


def test_div2_matches_dense_transpose():
    shape = (4, 4)
    q = np.zeros((4,) + shape)
    q[:, 1:-1, 1:-1] = 1.0
    h = _dense(hessian, shape, 4 * 16)
    np.testing.assert_allclose(div2(q).ravel(), h.T @ q.ravel(), atol=1e-14)


def test_div2_constant_interior_tensor_is_boundary_supported():
    q = np.zeros((4, 10, 10))
    q[:, 1:-1, 1:-1] = 1.0
    out = div2(q)
    assert np.all(out[2:-2, 2:-2] == 0)
    assert np.any(out != 0)


def test_laplacian_is_div_grad(rng):
    u = rng.standard_normal((6, 7))
    lap = (laplacian_neumann(u.shape) @ u.ravel()).reshape(u.shape)
    np.testing.assert_allclose(lap, div_backward(grad_forward(u)), atol=1e-13)
    assert abs(lap.sum()) < 1e-12


@settings(max_examples=40, deadline=None)
@given(h=st.integers(1, 64), w=st.integers(1, 64), seed=st.integers(0, 2**32 - 1))
def test_adjointness_property(h, w, seed):
    r = np.random.default_rng(seed)
    u = r.standard_normal((h, w))
    p = r.standard_normal((2, h, w))
    q = r.standard_normal((4, h, w))
    scale = np.linalg.norm(u)
    assert abs(np.sum(grad_forward(u) * p) + np.sum(u * div_backward(p))) <= 1e-10 * scale * np.linalg.norm(p)
    assert abs(np.sum(hessian(u) * q) - np.sum(u * div2(q))) <= 1e-10 * scale * np.linalg.norm(q)


def test_rejects_bad_shapes():
    with pytest.raises(ValueError):
        div_backward(np.zeros((3, 4, 4)))
    with pytest.raises(ValueError):
        div2(np.zeros((2, 4, 4)))
    with pytest.raises(ValueError):
        grad_forward(np.array([[np.nan]]))
