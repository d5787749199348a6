"""Discrete differential operators on an H x W pixel grid.

Fields are plain numpy arrays:

* scalar field: shape ``(H, W)``
* vector field: shape ``(2, H, W)``, components ``(x, y)`` where ``x`` runs
  along columns and ``y`` along rows
* tensor field: shape ``(4, H, W)``, components ``(xx, xy, yx, yy)``

Every operator is backed by a cached sparse matrix acting on the row-major
flattening of the image (pixel ``(i, j)`` has index ``i * W + j``).  The
divergences are the literal transposes of those matrices, so adjointness
holds to rounding error by construction.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np
import scipy.sparse as sp

__all__ = [
    "grad_forward",
    "div_backward",
    "hessian",
    "div2",
    "grad_matrix",
    "hessian_matrix",
    "laplacian_neumann",
    "pointwise_norm",
    "check_scalar",
]


def _forward_1d(n: int) -> sp.csr_matrix:
    # v[j] = u[j+1] - u[j], last entry 0 (replicate boundary)
    if n == 1:
        return sp.csr_matrix((1, 1))
    main = -np.ones(n)
    main[-1] = 0.0
    return sp.diags([main, np.ones(n - 1)], [0, 1], shape=(n, n), format="csr")


def _backward_1d(n: int) -> sp.csr_matrix:
    # v[j] = u[j] - u[j-1], first entry 0
    if n == 1:
        return sp.csr_matrix((1, 1))
    main = np.ones(n)
    main[0] = 0.0
    return sp.diags([main, -np.ones(n - 1)], [0, -1], shape=(n, n), format="csr")


def _backward_inner_1d(n: int) -> sp.csr_matrix:
    # backward difference restricted to 1..n-2; composed with the forward
    # difference it yields the central second difference, zero at both ends
    if n <= 2:
        return sp.csr_matrix((n, n))
    b = _backward_1d(n).tolil()
    b[n - 1, :] = 0.0
    return b.tocsr()


@lru_cache(maxsize=32)
def _parts(shape: tuple[int, int]) -> dict[str, sp.csr_matrix]:
    h, w = shape
    ih, iw = sp.identity(h, format="csr"), sp.identity(w, format="csr")
    fx = sp.kron(ih, _forward_1d(w), format="csr")
    fy = sp.kron(_forward_1d(h), iw, format="csr")
    bx = sp.kron(ih, _backward_1d(w), format="csr")
    by = sp.kron(_backward_1d(h), iw, format="csr")
    bxi = sp.kron(ih, _backward_inner_1d(w), format="csr")
    byi = sp.kron(_backward_inner_1d(h), iw, format="csr")
    return {"fx": fx, "fy": fy, "bx": bx, "by": by, "bxi": bxi, "byi": byi}


@lru_cache(maxsize=32)
def grad_matrix(shape: tuple[int, int]) -> sp.csr_matrix:
    """Sparse ``(2N, N)`` forward-difference gradient, x block first."""
    p = _parts(tuple(shape))
    return sp.vstack([p["fx"], p["fy"]], format="csr")


@lru_cache(maxsize=32)
def hessian_matrix(shape: tuple[int, int]) -> sp.csr_matrix:
    """Sparse ``(4N, N)`` second-difference operator.

    Blocks are ``xx = Bx' Fx``, ``xy = By Fx``, ``yx = Bx Fy``, ``yy = By' Fy``
    where ``F`` is the replicate-boundary forward difference, ``B`` the
    backward difference and ``B'`` the backward difference restricted to
    interior pixels.  Affine images lie in the kernel.
    """
    p = _parts(tuple(shape))
    return sp.vstack(
        [p["bxi"] @ p["fx"], p["by"] @ p["fx"], p["bx"] @ p["fy"], p["byi"] @ p["fy"]],
        format="csr",
    )


@lru_cache(maxsize=32)
def laplacian_neumann(shape: tuple[int, int]) -> sp.csr_matrix:
    """5-point Laplacian with zero Neumann boundary, ``-grad^T grad``."""
    g = grad_matrix(tuple(shape))
    return (-(g.T @ g)).tocsr()


def check_scalar(u: np.ndarray, name: str = "field") -> np.ndarray:
    u = np.asarray(u, dtype=float)
    if u.ndim != 2 or u.size == 0:
        raise ValueError(f"{name} must be a non-empty 2-D array, got shape {u.shape}")
    if not np.all(np.isfinite(u)):
        raise ValueError(f"{name} contains non-finite values")
    return u


def pointwise_norm(z: np.ndarray) -> np.ndarray:
    """Euclidean (vector) or Frobenius (tensor) norm over the leading axis."""
    return np.sqrt(np.sum(z * z, axis=0))


def grad_forward(u: np.ndarray) -> np.ndarray:
    u = check_scalar(u, "u")
    return (grad_matrix(u.shape) @ u.ravel()).reshape((2,) + u.shape)


def div_backward(p: np.ndarray) -> np.ndarray:
    """Negative adjoint of :func:`grad_forward`."""
    p = np.asarray(p, dtype=float)
    if p.ndim != 3 or p.shape[0] != 2:
        raise ValueError(f"vector field must have shape (2, H, W), got {p.shape}")
    shape = p.shape[1:]
    return -(grad_matrix(shape).T @ p.ravel()).reshape(shape)


def hessian(u: np.ndarray) -> np.ndarray:
    u = check_scalar(u, "u")
    return (hessian_matrix(u.shape) @ u.ravel()).reshape((4,) + u.shape)


def div2(q: np.ndarray) -> np.ndarray:
    """Adjoint of :func:`hessian`: ``<hessian(u), q> = <u, div2(q)>``."""
    q = np.asarray(q, dtype=float)
    if q.ndim != 3 or q.shape[0] != 4:
        raise ValueError(f"tensor field must have shape (4, H, W), got {q.shape}")
    shape = q.shape[1:]
    return (hessian_matrix(shape).T @ q.ravel()).reshape(shape)


def diff_operator(shape: tuple[int, int], order: int) -> sp.csr_matrix:
    """Gradient (order 1) or Hessian (order 2) matrix for ``shape``."""
    if order == 1:
        return grad_matrix(tuple(shape))
    if order == 2:
        return hessian_matrix(tuple(shape))
    raise ValueError(f"order must be 1 or 2, got {order}")


def apply_diff(u: np.ndarray, order: int) -> np.ndarray:
    u = check_scalar(u, "u")
    d = diff_operator(u.shape, order)
    return (d @ u.ravel()).reshape((2 * order,) + u.shape)
