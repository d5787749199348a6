"""Building blocks shared by the command line and the acceptance checks."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .fieldio import read_field
from .gamma import TikhonovTrainConfig, gamma_from_weight, train_tikhonov_weight
from .images import add_gaussian_noise, synthetic
from .lower import NewtonConfig, solve_lower
from .metrics import psnr
from .tgv import TgvWeights, solve_tgv

SYNTHETIC_PREFIX = "synthetic:"


def load_clean(source: str, size: int = 64) -> np.ndarray:
    """A clean image from ``synthetic:<name>`` or a PNG / VRF1 file."""
    if source.startswith(SYNTHETIC_PREFIX):
        return synthetic(source[len(SYNTHETIC_PREFIX) :], size)
    path = Path(source)
    if not path.exists():
        raise FileNotFoundError(f"input image not found: {source}")
    return read_field(path)


def noisy_datum(clean: np.ndarray, variance: float, seed: int) -> np.ndarray:
    return add_gaussian_noise(clean, variance, seed)


def resolve_field(value, shape, name: str) -> np.ndarray:
    """Number -> constant field; anything else is read as a field file."""
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return np.full(shape, float(value))
    try:
        return np.full(shape, float(value))
    except (TypeError, ValueError):
        pass
    path = Path(str(value))
    if not path.exists():
        raise FileNotFoundError(f"{name} field file not found: {value}")
    field = read_field(path)
    if field.shape != tuple(shape):
        raise ValueError(f"{name} field has shape {field.shape}, image has {tuple(shape)}")
    return field


def trained_gamma(g: np.ndarray, config: TikhonovTrainConfig):
    """``(gamma, alpha_tilde)`` from the auxiliary Tikhonov training."""
    alpha_tilde = train_tikhonov_weight(g, config).alpha
    return gamma_from_weight(alpha_tilde, config.s), alpha_tilde


def best_scalar_huber(g, ground_truth, order: int, gamma, grid, newton: NewtonConfig | None = None):
    """PSNR-optimal constant weight over ``grid``; returns ``(alpha, u, psnr)``."""
    best = None
    warm = None
    for a in sorted(grid):
        st = solve_lower(g, a, gamma, order, newton, *((warm.u, warm.p) if warm else (None, None)))
        warm = st
        value = psnr(st.u, ground_truth)
        if best is None or value > best[2]:
            best = (a, st.u, value)
    return best


def best_scalar_tgv(g, ground_truth, grid, ratios=(1.0, 2.0, 4.0), iters: int = 2000):
    """PSNR-optimal constant ``(alpha0, alpha1)`` with ``alpha0 = ratio * alpha1``."""
    best = None
    for a1 in grid:
        for r in ratios:
            u = solve_tgv(g, TgvWeights(r * a1, a1), iters=iters).u
            value = psnr(u, ground_truth)
            if best is None or value > best[2]:
                best = ((r * a1, a1), u, value)
    return best
