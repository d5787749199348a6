"""Bilevel learning of a spatially varying regularization weight.

The weight ``alpha`` is trained by projected gradient descent on the reduced
objective ``F(alpha) = F(u_alpha, alpha)``, where ``u_alpha`` solves the
weighted Huber TV / TV2 denoising problem.  Derivatives come from one
adjoint solve with the transposed generalized Jacobian of the lower-level
optimality system.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from typing import Callable, Literal

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .huber import _as_field
from .lower import (
    NewtonConfig,
    NewtonConvergenceError,
    PrimalDualState,
    _linearization,
    _linear_solve,
    _schur,
    solve_lower,
)
from .metrics import psnr, ssim
from .operators import check_scalar, diff_operator, grad_matrix
from .projection import h1_matrix, h1_project

log = logging.getLogger(__name__)

MAX_BACKTRACKS = 60


@dataclass
class BilevelConfig:
    alpha_lo: float = 1e-8
    alpha_hi: float = 5.0
    n_w: int = 7
    lambda_h1: float = 1e-11
    tau0: float = 1e-3
    armijo_c: float = 1e-12
    theta_minus: float = 0.25
    theta_plus: float = 2.0
    maxit: int = 100
    alpha_init: float | None = None
    sigma2: float = 0.01

    def __post_init__(self):
        if not 0 < self.alpha_lo < self.alpha_hi:
            raise ValueError("need 0 < alpha_lo < alpha_hi")
        if not 0 < self.theta_minus < 1 <= self.theta_plus:
            raise ValueError("need 0 < theta_minus < 1 <= theta_plus")
        if not 0 < self.armijo_c < 1:
            raise ValueError("need 0 < armijo_c < 1")
        if self.n_w < 1 or self.n_w % 2 == 0:
            raise ValueError(f"filter size n_w must be odd and positive, got {self.n_w}")
        if self.maxit < 0 or self.tau0 <= 0 or self.sigma2 <= 0:
            raise ValueError("maxit must be >= 0, tau0 and sigma2 positive")

    @property
    def corridor(self) -> tuple[float, float]:
        return corridor(self.sigma2, self.n_w)

    def initial_alpha(self, order: int) -> float:
        if self.alpha_init is not None:
            return self.alpha_init
        return 0.5 if order == 1 else 1.0


def corridor(sigma2: float, n_w: int) -> tuple[float, float]:
    """Target band ``sigma2 (1 -/+ sqrt(2)/n_w)`` for localized residuals."""
    eps = math.sqrt(2.0) / n_w
    return sigma2 * (1.0 - eps), sigma2 * (1.0 + eps)


@dataclass
class UpperObjective:
    kind: Literal["psnr", "stat"]
    ground_truth: np.ndarray | None = None
    sigma2: float = 0.01
    n_w: int = 7

    def __post_init__(self):
        if self.kind not in ("psnr", "stat"):
            raise ValueError(f"objective kind must be 'psnr' or 'stat', got {self.kind!r}")
        if self.kind == "psnr" and self.ground_truth is None:
            raise ValueError("the psnr objective needs a ground truth image")
        if self.n_w % 2 == 0 or self.n_w < 1:
            raise ValueError(f"filter size n_w must be odd and positive, got {self.n_w}")

    @property
    def corridor(self) -> tuple[float, float]:
        return corridor(self.sigma2, self.n_w)

    @classmethod
    def from_config(cls, kind, config: BilevelConfig, ground_truth=None) -> "UpperObjective":
        return cls(kind, ground_truth, config.sigma2, config.n_w)


@dataclass
class RunRecord:
    iteration: int
    objective: float
    tau: float
    backtracks: int
    psnr: float = math.nan
    ssim: float = math.nan
    accepted: bool = True
    previous_objective: float = math.nan
    directional: float = math.nan


CSV_FIELDS = [
    "iteration",
    "objective",
    "tau",
    "backtracks",
    "psnr",
    "ssim",
    "accepted",
    "previous_objective",
    "directional",
]


def write_records_csv(path, records: list[RunRecord]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(f, fieldnames=CSV_FIELDS)
        writer.writeheader()
        for r in records:
            row = asdict(r)
            row["accepted"] = int(r.accepted)
            writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})


def read_records_csv(path) -> list[RunRecord]:
    with open(path, newline="", encoding="utf-8") as f:
        out = []
        for row in csv.DictReader(f):
            out.append(
                RunRecord(
                    iteration=int(row["iteration"]),
                    objective=float(row["objective"]),
                    tau=float(row["tau"]),
                    backtracks=int(row["backtracks"]),
                    psnr=float(row["psnr"]),
                    ssim=float(row["ssim"]),
                    accepted=bool(int(row["accepted"])),
                    previous_objective=float(row["previous_objective"]),
                    directional=float(row["directional"]),
                )
            )
        return out


# -- upper level ------------------------------------------------------------


@lru_cache(maxsize=16)
def averaging_matrix(shape: tuple[int, int], n_w: int) -> sp.csr_matrix:
    """Uniform ``n_w x n_w`` window average with replicate padding.

    Every row sums to one; out-of-grid taps are redirected to the nearest
    boundary pixel.
    """
    if n_w % 2 == 0 or n_w < 1:
        raise ValueError(f"filter size n_w must be odd and positive, got {n_w}")
    h, w = shape
    r = n_w // 2
    ii, jj = np.mgrid[0:h, 0:w]
    rows, cols = [], []
    for di in range(-r, r + 1):
        for dj in range(-r, r + 1):
            si = np.clip(ii + di, 0, h - 1)
            sj = np.clip(jj + dj, 0, w - 1)
            rows.append((ii * w + jj).ravel())
            cols.append((si * w + sj).ravel())
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    vals = np.full(rows.shape, 1.0 / n_w**2)
    return sp.csr_matrix((vals, (rows, cols)), shape=(h * w, h * w))


def localized_residual(u, g, n_w: int) -> np.ndarray:
    """``R u``: windowed mean of ``(u - g)^2``."""
    u = check_scalar(u, "u")
    g = check_scalar(g, "g")
    if u.shape != g.shape:
        raise ValueError(f"grid mismatch: {u.shape} vs {g.shape}")
    return (averaging_matrix(u.shape, n_w) @ ((u - g) ** 2).ravel()).reshape(u.shape)


def h1_norm_sq(alpha: np.ndarray) -> float:
    ga = grad_matrix(alpha.shape) @ alpha.ravel()
    return float(alpha.ravel() @ alpha.ravel() + ga @ ga)


def eval_upper(objective: UpperObjective, u, g, alpha, lambda_h1: float) -> float:
    """Upper-level objective plus ``lambda/2 |alpha|_H1^2``."""
    u = check_scalar(u, "u")
    alpha = _as_field(alpha, u.shape, "alpha")
    if objective.kind == "psnr":
        gt = np.asarray(objective.ground_truth, dtype=float)
        value = float(np.sum((u - gt) ** 2))
    else:
        lo, hi = objective.corridor
        ru = localized_residual(u, g, objective.n_w)
        value = 0.5 * float(np.sum(np.maximum(ru - hi, 0.0) ** 2)) + 0.5 * float(
            np.sum(np.minimum(ru - lo, 0.0) ** 2)
        )
    if lambda_h1:
        value += 0.5 * lambda_h1 * h1_norm_sq(alpha)
    return value


def upper_gradient_u(objective: UpperObjective, u, g) -> np.ndarray:
    """Gradient of the upper objective with respect to ``u``."""
    u = check_scalar(u, "u")
    if objective.kind == "psnr":
        return 2.0 * (u - np.asarray(objective.ground_truth, dtype=float))
    lo, hi = objective.corridor
    w = averaging_matrix(u.shape, objective.n_w)
    ru = (w @ ((u - g) ** 2).ravel()).reshape(u.shape)
    s = np.maximum(ru - hi, 0.0) + np.minimum(ru - lo, 0.0)
    return 2.0 * (u - g) * (w.T @ s.ravel()).reshape(u.shape)


# -- adjoint and reduced derivative -------------------------------------------


def adjoint_solve(
    state: PrimalDualState, alpha, gamma, g, order: int, rhs_u, config: NewtonConfig | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """Solve ``J^T (u*, p*) = (-rhs_u, 0)`` at the converged lower-level state.

    ``J`` is the generalized Jacobian of :func:`lower.newton_system`.  The
    dual block is eliminated: ``p* = -M^{-1} D u*`` and ``u*`` solves the
    transposed Schur complement system.
    """
    g = check_scalar(g, "g")
    alpha = _as_field(alpha, g.shape, "alpha")
    gamma = _as_field(gamma, g.shape, "gamma")
    config = config or NewtonConfig()
    d, k, m = _linearization(state.u, state.p, alpha, gamma, g, order)
    c = 2 * order
    mt = np.tile(m, c)
    if np.any(mt <= 0):
        raise np.linalg.LinAlgError("singular adjoint system: max(|Du|, gamma) vanishes")
    b = -np.asarray(rhs_u, dtype=float).ravel()
    u_adj = _linear_solve(_schur(d, k, m, c), b, config, transpose=True)
    p_adj = -(d @ u_adj) / mt
    return u_adj.reshape(g.shape), p_adj.reshape((c,) + g.shape)


def reduced_derivative(
    state: PrimalDualState, adjoints, alpha, gamma, order: int, lambda_h1: float
) -> np.ndarray:
    """``(D_alpha G)^T (u*, p*) + D_alpha F`` as a field.

    ``D_alpha G`` maps ``delta`` to ``(0, -delta D u)``, so its transpose
    contracts ``p*`` against ``-D u`` pixelwise.  The H1 term contributes
    ``lambda (I - Delta_N) alpha``.
    """
    u = state.u
    alpha = _as_field(alpha, u.shape, "alpha")
    _, p_adj = adjoints
    c = 2 * order
    du = (diff_operator(u.shape, order) @ u.ravel()).reshape((c,) + u.shape)
    if p_adj.shape != du.shape:
        raise ValueError(f"grid mismatch: adjoint {p_adj.shape} vs {du.shape}")
    out = -np.sum(p_adj * du, axis=0)
    if lambda_h1:
        out = out + lambda_h1 * (h1_matrix(u.shape) @ alpha.ravel()).reshape(u.shape)
    return out


def reduced_gradient(derivative) -> np.ndarray:
    """Riesz representative in H1: solve ``(I - Delta_N) x = derivative``."""
    d = check_scalar(derivative, "derivative")
    return spla.spsolve(h1_matrix(d.shape), d.ravel()).reshape(d.shape)


# -- training loop ------------------------------------------------------------


@dataclass
class TrainResult:
    alpha: np.ndarray
    u: np.ndarray
    records: list[RunRecord]
    state: object = None
    alphas: list[np.ndarray] = field(default_factory=list)
    stalled: int = 0


class LowerLevelFailure(RuntimeError):
    def __init__(self, message: str, records: list[RunRecord]):
        super().__init__(message)
        self.records = records


def projected_gradient(
    alpha0: np.ndarray,
    solve: Callable,
    value: Callable,
    derivative: Callable,
    riesz: Callable,
    project: Callable,
    config: BilevelConfig,
    ground_truth=None,
    keep_iterates: bool = False,
) -> TrainResult:
    """Generic projected gradient loop with Armijo backtracking.

    ``solve(alpha, warm)`` returns a lower-level state (or raises),
    ``value(alpha, state)`` the reduced objective, ``derivative(alpha, state)``
    the derivative field and ``riesz`` maps it to the search gradient.
    """

    def metrics(u):
        if ground_truth is None:
            return math.nan, math.nan
        return psnr(u, ground_truth), ssim(u, ground_truth)

    def u_of(state):
        return state.u if hasattr(state, "u") else state

    alpha = np.array(alpha0, dtype=float)
    records: list[RunRecord] = []
    try:
        state = solve(alpha, None)
    except (NewtonConvergenceError, np.linalg.LinAlgError) as exc:
        raise LowerLevelFailure(f"lower-level solve failed at the initial weight: {exc}", records) from exc
    f_val = value(alpha, state)
    tau = config.tau0
    records.append(RunRecord(0, f_val, tau, 0, *metrics(u_of(state))))
    alphas = [alpha.copy()] if keep_iterates else []
    stalled = 0

    for k in range(1, config.maxit + 1):
        fprime = derivative(alpha, state)
        grad = riesz(fprime)
        backtracks = 0
        accepted = False
        tau_k = tau
        while True:
            trial = project(alpha - tau_k * grad)
            directional = float(np.sum(fprime * (trial - alpha)))
            try:
                trial_state = solve(trial, state)
                f_trial = value(trial, trial_state)
            except (NewtonConvergenceError, np.linalg.LinAlgError) as exc:
                log.debug("lower solve failed at trial step tau=%g: %s", tau_k, exc)
                f_trial = math.inf
            if f_trial <= f_val + config.armijo_c * directional:
                accepted = True
                break
            if backtracks >= MAX_BACKTRACKS:
                break
            tau_k *= config.theta_minus
            backtracks += 1

        if accepted:
            records.append(
                RunRecord(k, f_trial, tau_k, backtracks, *metrics(u_of(trial_state)), True, f_val, directional)
            )
            alpha, state, f_val = trial, trial_state, f_trial
            tau = config.theta_plus * tau_k
        else:
            stalled += 1
            log.info("iteration %d: line search exhausted, keeping alpha", k)
            records.append(RunRecord(k, f_val, tau, backtracks, *metrics(u_of(state)), False, f_val, 0.0))
        if keep_iterates:
            alphas.append(alpha.copy())

    return TrainResult(alpha, u_of(state), records, state, alphas, stalled)


def reduced_objective(g, alpha, gamma, order, objective, config: BilevelConfig, newton=None, warm=None):
    """``F(alpha)`` together with the lower-level state it was evaluated at."""
    state = solve_lower(
        g, alpha, gamma, order, newton, *((warm.u, warm.p) if warm is not None else (None, None))
    )
    return eval_upper(objective, state.u, g, alpha, config.lambda_h1), state


def reduced_derivative_at(g, alpha, gamma, order, objective, config, state, newton=None):
    rhs = upper_gradient_u(objective, state.u, g)
    adj = adjoint_solve(state, alpha, gamma, g, order, rhs, newton)
    return reduced_derivative(state, adj, alpha, gamma, order, config.lambda_h1)


def train(
    g,
    gamma,
    order: int,
    objective: UpperObjective,
    config: BilevelConfig | None = None,
    newton: NewtonConfig | None = None,
    ground_truth=None,
    alpha0=None,
    keep_iterates: bool = False,
) -> TrainResult:
    """Projected gradient training of the weight for weighted Huber TV / TV2.

    Each iteration solves the lower problem (warm-started), the adjoint
    equation, forms the derivative and its H1 Riesz representative, and
    backtracks along the H1-projected path until the Armijo condition holds.
    ``ground_truth`` (or the psnr objective's ground truth) is used only for
    the PSNR/SSIM columns of the records.

    Raises:
        LowerLevelFailure: the lower problem cannot be solved at the initial weight.
    """
    config = config or BilevelConfig()
    g = check_scalar(g, "g")
    gamma = _as_field(gamma, g.shape, "gamma")
    if order not in (1, 2):
        raise ValueError(f"order must be 1 or 2, got {order}")
    if alpha0 is None:
        alpha0 = np.full(g.shape, config.initial_alpha(order))
    alpha0 = np.clip(_as_field(alpha0, g.shape, "alpha0"), config.alpha_lo, config.alpha_hi)
    if ground_truth is None and objective.kind == "psnr":
        ground_truth = objective.ground_truth

    def solve(alpha, warm):
        u0, p0 = (warm.u, warm.p) if warm is not None else (None, None)
        return solve_lower(g, alpha, gamma, order, newton, u0, p0)

    def value(alpha, state):
        return eval_upper(objective, state.u, g, alpha, config.lambda_h1)

    def derivative(alpha, state):
        return reduced_derivative_at(g, alpha, gamma, order, objective, config, state, newton)

    return projected_gradient(
        alpha0,
        solve,
        value,
        derivative,
        reduced_gradient,
        lambda beta: h1_project(beta, config.alpha_lo, config.alpha_hi),
        config,
        ground_truth,
        keep_iterates,
    )
