"""Box projections of weight fields in the L2 and discrete H1 inner products."""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .operators import check_scalar, laplacian_neumann


class ProjectionError(RuntimeError):
    pass


def h1_matrix(shape: tuple[int, int]) -> sp.csc_matrix:
    """``I - Delta_N``, the Gram matrix of the discrete H1 inner product."""
    n = shape[0] * shape[1]
    return (sp.identity(n) - laplacian_neumann(tuple(shape))).tocsc()


def h1_project(beta, alpha_lo: float, alpha_hi: float, max_sweeps: int = 100, tol: float = 1e-10):
    """Project ``beta`` onto ``{alpha_lo <= x <= alpha_hi}`` in the H1 norm.

    Minimizes ``|x - beta|^2 + |grad(x - beta)|^2`` over the box with a
    primal-dual active-set iteration on the KKT system

        (I - Delta_N)(x - beta) + mu = 0,
        mu = max(0, mu + (x - hi)) + min(0, mu + (x - lo)).

    Each sweep fixes the active pixels at their bound and solves the
    remaining linear system exactly; the iteration stops when the active
    sets repeat.  Bilateral constraints can make the sweeps cycle; a cycle
    hands over to a projected Newton method, whose active sets then seed a
    final exact sweep.

    Raises:
        ProjectionError: no KKT point found within ``max_sweeps``.
    """
    beta = check_scalar(beta, "beta")
    if not alpha_lo < alpha_hi:
        raise ValueError(f"need alpha_lo < alpha_hi, got {alpha_lo}, {alpha_hi}")
    b = beta.ravel()
    if np.all((b >= alpha_lo) & (b <= alpha_hi)):
        return beta.copy()

    a = h1_matrix(beta.shape).tocsr()
    x = _active_set(a, b, np.clip(b, alpha_lo, alpha_hi), alpha_lo, alpha_hi, max_sweeps)
    if x is None:
        x = _projected_newton(a, b, alpha_lo, alpha_hi, max_sweeps, tol)
        polished = _active_set(a, b, x, alpha_lo, alpha_hi, max_sweeps)
        if polished is not None:
            x = polished
    if _kkt(a, x, b, alpha_lo, alpha_hi) > max(tol, 1e-8):
        raise ProjectionError(f"H1 projection did not reach a KKT point in {max_sweeps} sweeps")
    return x.reshape(beta.shape)


def _kkt(a, x, b, lo, hi) -> float:
    return float(np.linalg.norm(x - np.clip(x - a @ (x - b), lo, hi)))


def _active_set(a, b, x, lo, hi, max_sweeps):
    """Active-set sweeps from ``x``; ``None`` on a cycle or sweep exhaustion."""
    ab = a @ b
    mu = np.where((x > lo) & (x < hi), 0.0, -(a @ (x - b)))
    seen = set()
    previous = None
    for _ in range(max_sweeps):
        upper = mu + (x - hi) > 0
        lower = mu + (x - lo) < 0
        key = upper.tobytes() + lower.tobytes()
        if key == previous:
            return x
        if key in seen:
            return None
        seen.add(key)
        previous = key
        active = upper | lower
        free = ~active
        x = np.where(upper, hi, np.where(lower, lo, 0.0))
        if free.any():
            rhs = ab[free] - a[free][:, active] @ x[active]
            x[free] = spla.spsolve(a[free][:, free].tocsc(), rhs)
        mu = np.where(active, -(a @ (x - b)), 0.0)
    return None


def _projected_newton(a, b, lo, hi, max_iter, tol, eps0=1e-3, armijo=1e-4):
    # Bertsekas' projected Newton method for the box-constrained quadratic
    x = np.clip(b, lo, hi)

    def f(z):
        r = z - b
        return 0.5 * float(r @ (a @ r))

    for _ in range(max_iter * 10):
        grad = a @ (x - b)
        kkt = float(np.linalg.norm(x - np.clip(x - grad, lo, hi)))
        if kkt <= tol:
            break
        eps = min(eps0, kkt)
        binding = ((x <= lo + eps) & (grad > 0)) | ((x >= hi - eps) & (grad < 0))
        free = ~binding
        d = -grad.copy()
        if free.any():
            d[free] = spla.spsolve(a[free][:, free].tocsc(), -grad[free])
        fx = f(x)
        t = 1.0
        while True:
            xt = np.clip(x + t * d, lo, hi)
            decrease = t * float(-grad[free] @ d[free]) + float(grad[binding] @ (x - xt)[binding])
            if fx - f(xt) >= armijo * decrease or t < 1e-12:
                break
            t *= 0.5
        x = xt
    return x


def h1_kkt_residual(x, beta, alpha_lo: float, alpha_hi: float) -> float:
    """Norm of ``x - clip(x - (I - Delta_N)(x - beta))``, zero exactly at the projection."""
    x = np.asarray(x, dtype=float)
    a = h1_matrix(x.shape)
    grad = (a @ (x - np.asarray(beta, dtype=float)).ravel()).reshape(x.shape)
    return float(np.linalg.norm(x - np.clip(x - grad, alpha_lo, alpha_hi)))


def l2_project(beta, alpha_lo: float, alpha_hi: float) -> np.ndarray:
    """Pointwise clamp onto the box."""
    return np.clip(np.asarray(beta, dtype=float), alpha_lo, alpha_hi)
