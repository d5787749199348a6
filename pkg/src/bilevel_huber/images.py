"""Noise synthesis and the synthetic test corpus."""

from __future__ import annotations

import numpy as np

from .operators import check_scalar


def add_gaussian_noise(u: np.ndarray, variance: float, seed: int) -> np.ndarray:
    """Return ``u + eta`` with ``eta ~ N(0, variance)`` i.i.d., unclipped."""
    u = check_scalar(u, "u")
    if variance < 0:
        raise ValueError(f"noise variance must be nonnegative, got {variance}")
    if variance == 0:
        return u.copy()
    rng = np.random.default_rng(seed)
    return u + rng.normal(0.0, np.sqrt(variance), size=u.shape)


def piecewise_constant(n: int = 64) -> np.ndarray:
    """Disc and rectangle on a flat background."""
    i, j = np.mgrid[0:n, 0:n] / n
    u = np.full((n, n), 0.2)
    u[(i - 0.35) ** 2 + (j - 0.35) ** 2 < 0.2**2] = 0.8
    u[(i > 0.55) & (i < 0.85) & (j > 0.5) & (j < 0.9)] = 0.5
    return u


def piecewise_affine(n: int = 64) -> np.ndarray:
    """Two affine ramps separated by an oblique edge, plus a flat square."""
    i, j = np.mgrid[0:n, 0:n] / n
    u = np.where(i + 0.6 * j < 0.75, 0.15 + 0.5 * j, 0.9 - 0.4 * i)
    u[(i > 0.15) & (i < 0.4) & (j > 0.6) & (j < 0.85)] = 0.3
    return u


def bump_texture(n: int = 64) -> np.ndarray:
    """Smooth Gaussian bump with a striped texture patch in one corner."""
    i, j = np.mgrid[0:n, 0:n] / n
    u = 0.2 + 0.6 * np.exp(-((i - 0.45) ** 2 + (j - 0.55) ** 2) / (2 * 0.18**2))
    patch = (i > 0.62) & (i < 0.92) & (j > 0.08) & (j < 0.38)
    u[patch] = 0.5 + 0.25 * np.sign(np.sin(2 * np.pi * j[patch] * n / 6))
    return u


def step_edge(n: int = 32, low: float = 0.2, high: float = 0.8) -> np.ndarray:
    """Two flat halves separated by one vertical step."""
    u = np.full((n, n), low)
    u[:, n // 2 :] = high
    return u


CORPUS = {
    "piecewise_constant": piecewise_constant,
    "piecewise_affine": piecewise_affine,
    "bump_texture": bump_texture,
}


def synthetic(name: str, n: int = 64) -> np.ndarray:
    try:
        return CORPUS[name](n)
    except KeyError:
        raise ValueError(f"unknown synthetic image {name!r}; choose from {sorted(CORPUS)}") from None
