"""Spatially varying Huber parameter from an auxiliary weighted Tikhonov problem.

A weight ``alpha_tilde`` for ``1/2 sum alpha_tilde |grad u|^2`` is trained
with the statistics-based objective; it comes out small on edges and detail,
and ``gamma = s / alpha_tilde`` is then large exactly there.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse.linalg as spla

from .bilevel import (
    BilevelConfig,
    TrainResult,
    UpperObjective,
    eval_upper,
    projected_gradient,
    upper_gradient_u,
)
from .lower import solve_tikhonov, tikhonov_matrix
from .operators import check_scalar, grad_matrix
from .projection import l2_project


@dataclass
class TikhonovTrainConfig(BilevelConfig):
    alpha_lo: float = 1e-8
    alpha_hi: float = 15.0
    alpha_init: float | None = 15.0
    lambda_h1: float = 0.0
    s: float = 0.1

    def __post_init__(self):
        super().__post_init__()
        if self.s <= 0:
            raise ValueError(f"s must be positive, got {self.s}")


def tikhonov_derivative(g, alpha_tilde, u, objective: UpperObjective) -> np.ndarray:
    """Reduced derivative for the Tikhonov lower problem.

    The adjoint solves ``(I + grad^T diag(a) grad) u* = -D_u F`` and the
    derivative is ``sum_c (grad u)_c (grad u*)_c``.
    """
    a = tikhonov_matrix(alpha_tilde)
    rhs = -upper_gradient_u(objective, u, g).ravel()
    u_adj = spla.spsolve(a, rhs)
    gm = grad_matrix(u.shape)
    gu = (gm @ u.ravel()).reshape(2, -1)
    ga = (gm @ u_adj).reshape(2, -1)
    return np.sum(gu * ga, axis=0).reshape(u.shape)


def train_tikhonov_weight(g, config: TikhonovTrainConfig | None = None, ground_truth=None, keep_iterates=False) -> TrainResult:
    """Train ``alpha_tilde`` by projected gradient with a pointwise clamp."""
    config = config or TikhonovTrainConfig()
    g = check_scalar(g, "g")
    objective = UpperObjective("stat", None, config.sigma2, config.n_w)

    def solve(alpha, warm):
        return solve_tikhonov(g, alpha)

    def value(alpha, u):
        return eval_upper(objective, u, g, alpha, config.lambda_h1)

    def derivative(alpha, u):
        d = tikhonov_derivative(g, alpha, u, objective)
        if config.lambda_h1:
            from .projection import h1_matrix

            d = d + config.lambda_h1 * (h1_matrix(g.shape) @ alpha.ravel()).reshape(g.shape)
        return d

    alpha0 = np.full(g.shape, config.initial_alpha(1))
    return projected_gradient(
        alpha0,
        solve,
        value,
        derivative,
        lambda d: d,
        lambda beta: l2_project(beta, config.alpha_lo, config.alpha_hi),
        config,
        ground_truth,
        keep_iterates,
    )


def gamma_from_weight(alpha_tilde, s: float = 0.1) -> np.ndarray:
    """``gamma = s / alpha_tilde`` pointwise."""
    a = check_scalar(alpha_tilde, "alpha_tilde")
    if np.any(a <= 0):
        raise ValueError("alpha_tilde must be strictly positive")
    if s <= 0:
        raise ValueError(f"s must be positive, got {s}")
    return s / a


def gamma_from_edges(g, s: float = 0.1, sigma: float = 2.0, low: float = 1e-3, high: float = 15.0) -> np.ndarray:
    """Alternative Huber parameter from a Canny edge map.

    Edge pixels get the weight ``low`` and all others ``high`` before the same
    ``s / weight`` inversion, so ``gamma`` is large on edges.
    """
    from skimage.feature import canny

    edges = canny(check_scalar(g, "g"), sigma=sigma)
    return gamma_from_weight(np.where(edges, low, high), s)
