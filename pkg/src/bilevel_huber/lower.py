"""Semismooth Newton solver for weighted Huber TV / TV2 denoising.

The minimizer of ``1/2 |u - g|^2 + sum alpha f_gamma(D u)`` is characterized
by the primal-dual system

    r1 = u - g + D^T p = 0
    r2 = max(|D u|, gamma) p - alpha D u = 0

with ``D`` the forward gradient (order 1, ``D^T = -div``) or the discrete
Hessian (order 2, ``D^T = div2``).  The max is not smoothed; its Newton
derivative is the indicator of the set ``|D u| > gamma``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Literal

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .huber import _as_field
from .operators import check_scalar, diff_operator, grad_matrix

log = logging.getLogger(__name__)

KRYLOV_THRESHOLD = 256 * 256


class NewtonConvergenceError(RuntimeError):
    """Raised when the semismooth Newton iteration fails to converge."""

    def __init__(self, message: str, state: "PrimalDualState"):
        super().__init__(message)
        self.state = state


@dataclass
class NewtonConfig:
    newton_tol: float = 1e-4
    max_newton_iters: int = 50
    min_newton_iters: int = 1
    linear_solver: Literal["auto", "direct_sparse", "krylov"] = "auto"
    krylov_tol: float = 1e-10
    damping: bool = False
    retry_with_damping: bool = True
    project_dual: bool = True

    def __post_init__(self):
        if self.newton_tol <= 0 or self.krylov_tol <= 0:
            raise ValueError("tolerances must be positive")
        if self.max_newton_iters < 1:
            raise ValueError("max_newton_iters must be positive")
        if not 0 <= self.min_newton_iters <= self.max_newton_iters:
            raise ValueError("need 0 <= min_newton_iters <= max_newton_iters")


@dataclass
class PrimalDualState:
    u: np.ndarray
    p: np.ndarray
    residual_primal: float
    residual_dual: float
    newton_iters: int
    order: int = 1
    converged: bool = True
    history: list[float] = field(default_factory=list)


def _fields(u, g, alpha, gamma):
    g = check_scalar(g, "g")
    u = check_scalar(u, "u")
    if u.shape != g.shape:
        raise ValueError(f"grid mismatch: {u.shape} vs {g.shape}")
    alpha = _as_field(alpha, g.shape, "alpha")
    gamma = _as_field(gamma, g.shape, "gamma")
    if np.any(gamma < 0):
        raise ValueError("gamma must be nonnegative")
    return u, g, alpha, gamma


def _residual(u, p, alpha, gamma, g, order):
    u, g, alpha, gamma = _fields(u, g, alpha, gamma)
    d = diff_operator(g.shape, order)
    c = 2 * order
    p = np.asarray(p, dtype=float)
    if p.shape != (c,) + g.shape:
        raise ValueError(f"dual must have shape {(c,) + g.shape}, got {p.shape}")
    du = (d @ u.ravel()).reshape(p.shape)
    m = np.maximum(np.sqrt(np.sum(du * du, axis=0)), gamma)
    r1 = u - g + (d.T @ p.ravel()).reshape(g.shape)
    r2 = m * p - alpha * du
    return r1, r2


def residual_order1(u, p, alpha, gamma, g):
    """``(u - g - div p, max(|grad u|, gamma) p - alpha grad u)``."""
    return _residual(u, p, alpha, gamma, g, 1)


def residual_order2(u, p, alpha, gamma, g):
    """``(u - g + div2 p, max(|hess u|, gamma) p - alpha hess u)``."""
    return _residual(u, p, alpha, gamma, g, 2)


def residual(u, p, alpha, gamma, g, order: int):
    return _residual(u, p, alpha, gamma, g, order)


def _linearization(u, p, alpha, gamma, g, order, project_dual=False):
    """Pieces of the generalized Jacobian at ``(u, p)``.

    Returns ``(D, K, m)`` where ``K = diag(alpha) - chi * p (Du/|Du|)^T`` acts
    on the stacked components of ``D u`` and ``m = max(|Du|, gamma)``, so the
    second block row of the Jacobian is ``[-K D, diag(m)]``.

    With ``project_dual`` the ``p`` entering ``K`` is first scaled onto
    ``|p| <= alpha``.  Roots satisfy ``|p| = alpha`` on the active set, so
    the Jacobian at a solution is unchanged.
    """
    shape = g.shape
    n = g.size
    c = 2 * order
    d = diff_operator(shape, order)
    du = (d @ u.ravel()).reshape(c, n)
    pf = np.asarray(p, dtype=float).reshape(c, n)
    if project_dual:
        a = alpha.ravel()
        pf = pf * (a / np.maximum(a, np.sqrt(np.sum(pf * pf, axis=0))))
    norm = np.sqrt(np.sum(du * du, axis=0))
    gam = gamma.ravel()
    active = norm > gam  # ties go to the quadratic branch
    m = np.where(active, norm, gam)
    nu = np.zeros_like(du)
    nu[:, active] = du[:, active] / norm[active]

    rows, cols, vals = [], [], []
    idx = np.arange(n)
    for a in range(c):
        for b in range(c):
            v = -pf[a] * nu[b]
            if a == b:
                v = v + alpha.ravel()
            keep = v != 0
            rows.append(a * n + idx[keep])
            cols.append(b * n + idx[keep])
            vals.append(v[keep])
    k = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(c * n, c * n)
    )
    return d, k, m


def newton_system(u, p, alpha, gamma, g, order: int):
    """Generalized Jacobian ``J`` and right-hand side ``-G(u, p)``.

    ``J = [[I, D^T], [chi p (Du/|Du|)^T D - diag(alpha) D, diag(max(|Du|, gamma))]]``
    with unknowns ordered ``(u, p)`` and ``p`` flattened component-major.
    """
    u, g, alpha, gamma = _fields(u, g, alpha, gamma)
    r1, r2 = _residual(u, p, alpha, gamma, g, order)
    d, k, m = _linearization(u, p, alpha, gamma, g, order)
    c = 2 * order
    jac = sp.bmat(
        [
            [sp.identity(g.size), d.T],
            [-(k @ d), sp.diags(np.tile(m, c))],
        ],
        format="csc",
    )
    rhs = -np.concatenate([r1.ravel(), r2.ravel()])
    return jac, rhs


def _schur(d, k, m, c):
    # eliminating dp: (I + D^T M^{-1} K D) du = -r1 + D^T M^{-1} r2
    minv = sp.diags(1.0 / np.tile(m, c))
    return (sp.identity(d.shape[1]) + d.T @ (minv @ (k @ d))).tocsc()


def _linear_solve(a, b, config: NewtonConfig, transpose: bool = False):
    method = config.linear_solver
    if method == "auto":
        method = "krylov" if a.shape[0] > KRYLOV_THRESHOLD else "direct_sparse"
    if transpose:
        a = a.T.tocsc()
    if method == "direct_sparse":
        try:
            return spla.splu(a).solve(b)
        except RuntimeError as exc:
            raise np.linalg.LinAlgError(f"singular Newton system: {exc}") from exc
    diag = a.diagonal()
    precond = sp.diags(1.0 / np.where(diag != 0, diag, 1.0))
    x, info = spla.gmres(a, b, M=precond, rtol=config.krylov_tol, atol=0.0, restart=100, maxiter=50)
    if info != 0:
        raise np.linalg.LinAlgError(f"GMRES did not converge (info={info})")
    return x


def solve_lower(
    g,
    alpha,
    gamma,
    order: int,
    config: NewtonConfig | None = None,
    u0=None,
    p0=None,
) -> PrimalDualState:
    """Solve the weighted Huber TV (order 1) or TV2 (order 2) denoising problem.

    Starts from ``(u0, p0)``, defaulting to ``(g, 0)``.  The plain semismooth
    Newton iteration runs first; if it fails and ``config.retry_with_damping``
    is set, the solve is repeated from the same start with backtracking on the
    residual norm.

    Raises:
        NewtonConvergenceError: no convergence within ``max_newton_iters``.
    """
    config = config or NewtonConfig()
    g = check_scalar(g, "g")
    alpha = _as_field(alpha, g.shape, "alpha")
    gamma = _as_field(gamma, g.shape, "gamma")
    if np.any(gamma <= 0):
        raise ValueError("the Newton solver needs gamma > 0 everywhere")
    if np.any(alpha <= 0):
        raise ValueError("alpha must be positive")
    c = 2 * order
    u = g.copy() if u0 is None else check_scalar(u0, "u0").copy()
    p = np.zeros((c,) + g.shape) if p0 is None else np.array(p0, dtype=float)

    try:
        return _newton(u, p, alpha, gamma, g, order, config, damping=config.damping)
    except (NewtonConvergenceError, np.linalg.LinAlgError) as exc:
        if config.damping or not config.retry_with_damping:
            raise
        log.info("undamped Newton failed (%s); retrying with damping", exc)
        u = g.copy() if u0 is None else np.asarray(u0, dtype=float).copy()
        p = np.zeros((c,) + g.shape) if p0 is None else np.array(p0, dtype=float)
        return _newton(u, p, alpha, gamma, g, order, config, damping=True)


def _newton(u, p, alpha, gamma, g, order, config, damping):
    c = 2 * order
    history = []

    def norms(r1, r2):
        return float(np.linalg.norm(r1)), float(np.linalg.norm(r2))

    r1, r2 = _residual(u, p, alpha, gamma, g, order)
    n1, n2 = norms(r1, r2)
    for it in range(config.max_newton_iters + 1):
        history.append(np.hypot(n1, n2))
        if n1 < config.newton_tol and n2 < config.newton_tol and it >= config.min_newton_iters:
            return PrimalDualState(u, p, n1, n2, it, order, True, history)
        if it == config.max_newton_iters:
            break
        d, k, m = _linearization(u, p, alpha, gamma, g, order, config.project_dual)
        mt = np.tile(m, c)
        rhs = -r1.ravel() + d.T @ (r2.ravel() / mt)
        du = _linear_solve(_schur(d, k, m, c), rhs, config)
        dp = (-r2.ravel() + k @ (d @ du)) / mt
        du = du.reshape(u.shape)
        dp = dp.reshape(p.shape)

        step = 1.0
        if damping:
            merit = np.hypot(n1, n2)
            for _ in range(20):
                t1, t2 = _residual(u + step * du, p + step * dp, alpha, gamma, g, order)
                if np.hypot(*norms(t1, t2)) < merit:
                    break
                step *= 0.5
        u = u + step * du
        p = p + step * dp
        r1, r2 = _residual(u, p, alpha, gamma, g, order)
        n1, n2 = norms(r1, r2)
        if not (np.isfinite(n1) and np.isfinite(n2)):
            break

    state = PrimalDualState(u, p, n1, n2, len(history) - 1, order, False, history)
    raise NewtonConvergenceError(
        f"semismooth Newton did not reach tol {config.newton_tol:g} in "
        f"{config.max_newton_iters} iterations (|r1|={n1:.3e}, |r2|={n2:.3e})",
        state,
    )


def solve_tikhonov(g, alpha_tilde) -> np.ndarray:
    """Solve ``u - div(alpha_tilde grad u) = g`` exactly (sparse LU)."""
    g = check_scalar(g, "g")
    a = _as_field(alpha_tilde, g.shape, "alpha_tilde")
    if np.any(a < 0):
        raise ValueError("alpha_tilde must be nonnegative")
    return spla.spsolve(tikhonov_matrix(a), g.ravel()).reshape(g.shape)


def tikhonov_matrix(alpha_tilde: np.ndarray) -> sp.csc_matrix:
    """``I + grad^T diag(alpha_tilde) grad``, the Jacobian of the Tikhonov system."""
    gm = grad_matrix(alpha_tilde.shape)
    w = sp.diags(np.tile(alpha_tilde.ravel(), 2))
    return (sp.identity(alpha_tilde.size) + gm.T @ w @ gm).tocsc()
