"""Spatially weighted Huber TV / TV2 denoising with bilevel weight learning."""

from .bilevel import BilevelConfig, RunRecord, TrainResult, UpperObjective, train
from .gamma import TikhonovTrainConfig, gamma_from_weight, train_tikhonov_weight
from .huber import energy_huber_tv, huber_eval, huber_gradient
from .lower import NewtonConfig, NewtonConvergenceError, PrimalDualState, solve_lower, solve_tikhonov
from .metrics import psnr, ssim
from .operators import div2, div_backward, grad_forward, hessian
from .projection import h1_project
from .tgv import TgvWeights, solve_tgv

__all__ = [
    "BilevelConfig",
    "NewtonConfig",
    "NewtonConvergenceError",
    "PrimalDualState",
    "RunRecord",
    "TgvWeights",
    "TikhonovTrainConfig",
    "TrainResult",
    "UpperObjective",
    "div2",
    "div_backward",
    "energy_huber_tv",
    "gamma_from_weight",
    "grad_forward",
    "h1_project",
    "hessian",
    "huber_eval",
    "huber_gradient",
    "psnr",
    "solve_lower",
    "solve_tgv",
    "solve_tikhonov",
    "ssim",
    "train",
    "train_tikhonov_weight",
]
