"""Matrix-free Krylov kernels shared by every linear solve.

Operators and preconditioners are plain callables on flat numpy vectors.
Both kernels stop on an absolute residual target ``atol`` (callers scale it
from their own data so that warm starts pay off) and return the residual of
the returned iterate recomputed from scratch.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

logger = logging.getLogger(__name__)


class SolverError(RuntimeError):
    """A solve could not deliver its contract (exit code 3 territory)."""


class ConvergenceError(SolverError):
    def __init__(self, message: str, residual: float = float("nan"), iterations: int = 0):
        super().__init__(f"{message} (residual {residual:.3e} after {iterations} iterations)")
        self.residual = residual
        self.iterations = iterations


@dataclass(frozen=True)
class KrylovSpec:
    """Which kernel, and how hard to push it."""

    method: str = "cg"
    rtol: float = 1e-10
    maxiter: int = 500

    def __post_init__(self):
        if self.method not in ("cg", "bicgstab"):
            raise ValueError(f"unknown Krylov method {self.method!r}")
        if not 0.0 < self.rtol < 1.0:
            raise ValueError("rtol must lie in (0, 1)")
        if self.maxiter < 1:
            raise ValueError("maxiter must be >= 1")


@dataclass
class KrylovResult:
    x: np.ndarray
    residual: float
    iterations: int
    converged: bool
    history: list = field(default_factory=list)


def _identity(r):
    return r


def _start(matvec, b, x0, project):
    """Initial iterate and residual; a warm start worse than zero is dropped."""
    if x0 is not None:
        x = project(np.array(x0, dtype=float))
        r = b - matvec(x)
        if np.linalg.norm(r) <= np.linalg.norm(b):
            return x, r
    return np.zeros_like(b), b.copy()


def cg(matvec, b, x0=None, atol=0.0, maxiter=500, precond=None, project=None) -> KrylovResult:
    """Preconditioned conjugate gradients with minimal-residual smoothing.

    The smoothed iterate (Zhou & Walker) has a residual norm that never
    increases, so ``history`` is monotone even where plain CG oscillates.
    ``project`` removes a null space (e.g. constants) from search directions.
    """
    precond = precond or _identity
    project = project or _identity
    x, r = _start(matvec, b, x0, project)
    y, s = x.copy(), r.copy()
    snorm = float(np.linalg.norm(s))
    history = [snorm]
    if snorm <= atol:
        return KrylovResult(y, snorm, 0, True, history)
    z = project(precond(r))
    p = z.copy()
    rz = float(np.dot(r, z))
    it = 0
    for it in range(1, maxiter + 1):
        ap = matvec(p)
        pap = float(np.dot(p, ap))
        if pap <= 0.0:
            break
        alpha = rz / pap
        x += alpha * p
        r -= alpha * ap
        # minimal residual smoothing
        d = r - s
        dd = float(np.dot(d, d))
        if dd > 0.0:
            eta = -float(np.dot(s, d)) / dd
            s += eta * d
            y += eta * (x - y)
        snorm = float(np.linalg.norm(s))
        history.append(snorm)
        if snorm <= atol:
            break
        z = project(precond(r))
        rz_new = float(np.dot(r, z))
        p = z + (rz_new / rz) * p
        rz = rz_new
    true_res = float(np.linalg.norm(b - matvec(y)))
    return KrylovResult(y, true_res, it, true_res <= max(atol, 0.0) * (1 + 1e-8) or snorm <= atol, history)


def bicgstab(matvec, b, x0=None, atol=0.0, maxiter=500, precond=None, project=None,
             restarts: int = 5) -> KrylovResult:
    """Right-preconditioned BiCGStab, restarted on breakdown or stall."""
    precond = precond or _identity
    project = project or _identity
    x, _ = _start(matvec, b, x0, project)
    history = []
    total = 0
    for _ in range(restarts + 1):
        r = b - matvec(x)
        rnorm = float(np.linalg.norm(r))
        history.append(rnorm)
        if rnorm <= atol:
            return KrylovResult(x, rnorm, total, True, history)
        r_hat = r.copy()
        rho = alpha = omega = 1.0
        v = np.zeros_like(b)
        p = np.zeros_like(b)
        breakdown = False
        while total < maxiter:
            total += 1
            rho_new = float(np.dot(r_hat, r))
            if abs(rho_new) < 1e-300 or omega == 0.0:
                breakdown = True
                break
            beta = (rho_new / rho) * (alpha / omega)
            rho = rho_new
            p = r + beta * (p - omega * v)
            p_hat = project(precond(p))
            v = matvec(p_hat)
            denom = float(np.dot(r_hat, v))
            if denom == 0.0:
                breakdown = True
                break
            alpha = rho / denom
            s = r - alpha * v
            if float(np.linalg.norm(s)) <= atol:
                x = x + alpha * p_hat
                r = s
                history.append(float(np.linalg.norm(r)))
                break
            s_hat = project(precond(s))
            t = matvec(s_hat)
            tt = float(np.dot(t, t))
            omega = float(np.dot(t, s)) / tt if tt > 0.0 else 0.0
            x = x + alpha * p_hat + omega * s_hat
            r = s - omega * t
            rnorm = float(np.linalg.norm(r))
            history.append(rnorm)
            if rnorm <= atol:
                break
        if not breakdown or total >= maxiter:
            if float(np.linalg.norm(r)) <= atol or total >= maxiter:
                break
        logger.debug("bicgstab restart after %d iterations", total)
    true_res = float(np.linalg.norm(b - matvec(x)))
    return KrylovResult(x, true_res, total, true_res <= atol * (1 + 1e-6), history)


def krylov_solve(spec: KrylovSpec, matvec, b, x0=None, atol=0.0, precond=None, project=None) -> KrylovResult:
    kernel = cg if spec.method == "cg" else bicgstab
    return kernel(matvec, b, x0=x0, atol=atol, maxiter=spec.maxiter, precond=precond, project=project)
