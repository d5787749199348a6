"""Image quality metrics for images scaled to [0, 1]."""

from __future__ import annotations

import math

import numpy as np
from skimage.metrics import structural_similarity

DATA_RANGE = 1.0


def _pair(u, reference) -> tuple[np.ndarray, np.ndarray]:
    u = np.asarray(u, dtype=float)
    reference = np.asarray(reference, dtype=float)
    if u.shape != reference.shape:
        raise ValueError(f"grid mismatch: {u.shape} vs {reference.shape}")
    return u, reference


def psnr(u, reference, data_range: float = DATA_RANGE) -> float:
    """Peak signal-to-noise ratio in dB; ``inf`` for identical images."""
    u, reference = _pair(u, reference)
    mse = float(np.mean((u - reference) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(data_range**2 / mse)


def ssim(u, reference, data_range: float = DATA_RANGE) -> float:
    """Gaussian-window SSIM (11x11, sigma 1.5, K1=0.01, K2=0.03)."""
    u, reference = _pair(u, reference)
    if np.array_equal(u, reference):
        return 1.0
    # skimage truncates the Gaussian at 3.5 sigma: 11 taps for sigma=1.5
    return float(
        structural_similarity(
            u,
            reference,
            data_range=data_range,
            gaussian_weights=True,
            sigma=1.5,
            use_sample_covariance=False,
            K1=0.01,
            K2=0.03,
        )
    )
