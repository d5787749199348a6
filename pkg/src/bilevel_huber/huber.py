"""Spatially varying Huber integrand and the weighted Huber TV / TV2 energies."""

from __future__ import annotations

import numpy as np

from .operators import apply_diff, check_scalar, pointwise_norm

GAMMA_MIN = 1e-12


def huber_from_norm(norm: np.ndarray, gamma: np.ndarray | float) -> np.ndarray:
    """Huber function evaluated on precomputed pointwise norms ``|z|``.

    ``|z| - gamma/2`` where ``|z| >= gamma`` and ``|z|^2 / (2 gamma)``
    elsewhere.  ``gamma`` below :data:`GAMMA_MIN` falls back to ``|z|``.
    """
    norm = np.asarray(norm, dtype=float)
    gamma = np.broadcast_to(np.asarray(gamma, dtype=float), norm.shape)
    if np.any(gamma < 0):
        raise ValueError("Huber parameter must be nonnegative")
    tv = gamma < GAMMA_MIN
    linear = (norm >= gamma) | tv
    safe = np.where(tv, 1.0, gamma)
    return np.where(linear, norm - np.where(tv, 0.0, gamma) / 2, norm * norm / (2 * safe))


def huber_eval(gamma: float, z) -> float:
    """Huber function of one pixel value ``z`` (vector or tensor entries)."""
    z = np.asarray(z, dtype=float).ravel()
    return float(huber_from_norm(np.linalg.norm(z), gamma))


def huber_gradient(gamma: float, z) -> np.ndarray:
    """Gradient ``z / max(|z|, gamma)`` of the Huber function at ``z``."""
    z = np.asarray(z, dtype=float)
    n = np.linalg.norm(z.ravel())
    denom = max(n, gamma)
    if denom == 0.0:
        return np.zeros_like(z)
    return z / denom


def energy_huber_tv(u: np.ndarray, alpha, gamma, order: int) -> float:
    """Weighted Huber regularizer ``sum_x alpha(x) f_gamma(x, D u(x))``.

    ``D`` is the forward gradient (order 1) or the discrete Hessian (order 2).
    ``alpha`` and ``gamma`` are scalars or fields on the grid of ``u``.  The
    sum is taken with ``numpy.sum`` over the row-major flattening, so the
    reduction order is fixed.
    """
    u = check_scalar(u, "u")
    alpha = _as_field(alpha, u.shape, "alpha")
    gamma = _as_field(gamma, u.shape, "gamma")
    norm = pointwise_norm(apply_diff(u, order))
    return float(np.sum(alpha * huber_from_norm(norm, gamma)))


def lower_energy(u: np.ndarray, g: np.ndarray, alpha, gamma, order: int) -> float:
    """Denoising energy ``1/2 sum (u - g)^2 + energy_huber_tv(u)``."""
    u = check_scalar(u, "u")
    g = check_scalar(g, "g")
    if u.shape != g.shape:
        raise ValueError(f"grid mismatch: {u.shape} vs {g.shape}")
    return 0.5 * float(np.sum((u - g) ** 2)) + energy_huber_tv(u, alpha, gamma, order)


def _as_field(a, shape: tuple[int, int], name: str) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if a.ndim == 0:
        return np.full(shape, float(a))
    if a.shape != tuple(shape):
        raise ValueError(f"grid mismatch for {name}: {a.shape} vs {tuple(shape)}")
    return a
