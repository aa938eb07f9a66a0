"""Scalar Neumann problem with the Hall coefficient and div-curl reconstruction.

The Maxwell-type subproblem is split in two elliptic pieces:

* a potential ``phi`` solving ``div[A^{-1}(H)(grad phi + G)] = 0`` with zero
  normal flux (:func:`solve_neumann`), whose flux ``J`` is discretely
  divergence-free with vanishing boundary-normal entries;
* the edge field ``B`` with ``curl B = J``, ``div B = 0`` and zero tangential
  trace (:func:`reconstruct_B`), obtained from the edge vector Laplacian
  ``curl_f2e curl_e2f + grad_n2e grad_n2e^T``.  On the staggered cube that
  operator splits into three scalar Laplacians with mixed boundary kinds,
  which :func:`solve_poisson_mixed` handles.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from hall_steady.fields import EdgeField, FaceField, ScalarField
from hall_steady.grid import EDGE_LOCS, FACE_LOCS, NODE, Grid
from hall_steady.hallmat import A_inv_matrix, collocated, uncollocated
from hall_steady.krylov import (
    ConvergenceError,
    KrylovSpec,
    SolverError,
    bicgstab,
    cg,
)
from hall_steady.spectral import SeparableLaplacian

logger = logging.getLogger(__name__)

COMPATIBILITY_TOL = 1e-8

# Per-axis kinds for each supported boundary pattern.  Edge components are
# Neumann along their own direction and Dirichlet across it; no-slip face
# components are the other way round.
BC_PATTERNS = {
    "neumann": ("cn", "cn", "cn"),
    "x-edge": ("cn", "nd", "nd"),
    "y-edge": ("nd", "cn", "nd"),
    "z-edge": ("nd", "nd", "cn"),
    "x-face": ("nd", "cd", "cd"),
    "y-face": ("cd", "nd", "cd"),
    "z-face": ("cd", "cd", "nd"),
    "nodes": ("nd", "nd", "nd"),
}
EDGE_PATTERNS = ("x-edge", "y-edge", "z-edge")
FACE_PATTERNS = ("x-face", "y-face", "z-face")


class CompatibilityError(SolverError):
    """Right-hand side violates the solvability condition of the problem."""


@lru_cache(maxsize=64)
def laplacian(kinds: tuple, n: int) -> SeparableLaplacian:
    return SeparableLaplacian(kinds, n, 1.0 / n)


def _kinds(bc_pattern) -> tuple:
    if isinstance(bc_pattern, str):
        try:
            return BC_PATTERNS[bc_pattern]
        except KeyError:
            raise ValueError(f"unknown boundary pattern {bc_pattern!r}") from None
    kinds = tuple(bc_pattern)
    if kinds not in BC_PATTERNS.values():
        raise ValueError(f"unsupported boundary kinds {kinds!r}")
    return kinds


def _l2_cells(v: np.ndarray, h: float) -> float:
    return float(np.linalg.norm(v)) * h**1.5


# ---------------------------------------------------------------------------
# scalar Poisson kernel
# ---------------------------------------------------------------------------


def solve_poisson_mixed(rhs: np.ndarray, bc_pattern, spec: KrylovSpec | None = None,
                        x0: np.ndarray | None = None) -> np.ndarray:
    """Solve ``-Lap v = rhs`` for one component array.

    ``rhs`` has the interior shape of the pattern (``n-1`` points along
    Dirichlet node axes, ``n`` otherwise).  Conjugate gradients are
    preconditioned by the exact fast-transform inverse of the same operator,
    so they converge in one or two steps; the iteration is kept because it
    certifies the residual independently of the transform.
    """
    spec = spec or KrylovSpec()
    kinds = _kinds(bc_pattern)
    rhs = np.asarray(rhs, dtype=float)
    n = rhs.shape[0] + 1 if kinds[0] == "nd" else rhs.shape[0]
    lap = laplacian(kinds, n)
    if rhs.shape != lap.shape:
        raise ValueError(f"rhs shape {rhs.shape} does not match pattern shape {lap.shape}")
    b = rhs.ravel()
    project = None
    if lap.singular:
        scale = float(np.max(np.abs(b), initial=0.0))
        if abs(float(np.mean(b))) > COMPATIBILITY_TOL * max(scale, 1e-300):
            raise CompatibilityError(
                f"pure-Neumann right-hand side has nonzero mean {np.mean(b):.3e}"
            )
        b = b - b.mean()

        def project(v):
            return v - v.mean()

    bnorm = float(np.linalg.norm(b))
    if bnorm == 0.0:
        return np.zeros(lap.shape)
    res = cg(
        lambda v: lap.apply(v).ravel(),
        b,
        x0=None if x0 is None else np.asarray(x0, dtype=float).ravel(),
        atol=spec.rtol * bnorm,
        maxiter=spec.maxiter,
        precond=lambda r: lap.solve(r).ravel(),
        project=project,
    )
    if not res.converged:
        raise ConvergenceError("Poisson solve did not converge", res.residual / bnorm, res.iterations)
    return res.x.reshape(lap.shape)


# ---------------------------------------------------------------------------
# variable-coefficient Neumann problem
# ---------------------------------------------------------------------------


@dataclass
class NeumannSolution:
    phi: ScalarField
    flux: FaceField
    iterations: int
    residual: float


class HallFluxOperator:
    """Discrete flux map ``xi -> A^{-1}(mu H) xi`` on interior faces.

    ``xi`` is averaged to cell centres, the pointwise deviation
    ``K = A^{-1} - I`` is applied there and carried back with the adjoint
    average.  Boundary faces are not unknowns: in every wall cell their
    ``xi`` is eliminated so that the outgoing normal flux is exactly zero.
    With ``Kc`` the resulting per-cell matrix the map is::

        M xi = xi + Pstar_int [Kc (P0 xi)]

    where ``P0`` averages interior faces to centres (wall faces taken as 0).
    """

    def __init__(self, H: EdgeField | None, grid: Grid, mu: float = 1.0):
        self.grid = grid
        self.mu = float(mu)
        fi = grid.face_interior
        self._p0 = grid.face_to_center[:, fi].tocsr()
        self._pstar = grid.center_to_face[fi, :].tocsr()
        self.trivial = H is None or not np.any(H.data) or self.mu == 0.0
        if self.trivial:
            self.Kc = None
            return
        if H.grid != grid:
            raise ValueError("coefficient field lives on another grid")
        hc = self.mu * collocated(grid, grid.edge_to_center @ H.data)
        K = A_inv_matrix(hc) - np.eye(3)
        wall = self._wall_mask(grid)
        D = wall[:, :, None] * np.eye(3)
        S = np.eye(3) + 0.5 * D @ K @ D
        self.Kc = K - 0.5 * K @ np.linalg.solve(S, D @ K)
        self.hc = hc

    @staticmethod
    def _wall_mask(grid: Grid) -> np.ndarray:
        """(n^3, 3) booleans: does this cell own a wall face normal to axis a."""
        idx = np.arange(grid.n)
        touch = (idx == 0) | (idx == grid.n - 1)
        out = np.empty((grid.n_cells, 3), dtype=float)
        shape = (grid.n,) * 3
        for a in range(3):
            t = [touch if ax == a else np.ones(grid.n, dtype=bool) for ax in range(3)]
            m = t[0][:, None, None] & t[1][None, :, None] & t[2][None, None, :]
            out[:, a] = m.reshape(shape).ravel(order="F")
        return out

    def apply(self, xi_int: np.ndarray) -> np.ndarray:
        if self.trivial:
            return xi_int.copy()
        y0 = collocated(self.grid, self._p0 @ xi_int)
        ky = np.einsum("cij,cj->ci", self.Kc, y0)
        return xi_int + self._pstar @ uncollocated(ky)

    def apply_inverse(self, J_int: np.ndarray, rtol: float = 1e-12, maxiter: int = 500,
                      x0: np.ndarray | None = None) -> np.ndarray:
        """Forward Hall map ``A_h(mu H)`` as the inverse of :meth:`apply`."""
        if self.trivial:
            return J_int.copy()
        bnorm = float(np.linalg.norm(J_int))
        if bnorm == 0.0:
            return np.zeros_like(J_int)
        res = bicgstab(self.apply, J_int, x0=x0 if x0 is not None else J_int, atol=rtol * bnorm, maxiter=maxiter)
        if not res.converged:
            raise ConvergenceError("forward Hall map did not converge", res.residual / bnorm, res.iterations)
        return res.x


class NeumannOperator:
    """``phi -> -div[A^{-1}(mu H) grad phi]`` with zero normal flux.

    Preconditioned by the constant-coefficient Neumann Laplacian, which is
    spectrally equivalent thanks to the ellipticity of ``A^{-1}``.
    """

    def __init__(self, H: EdgeField | None, grid: Grid | None = None, mu: float = 1.0):
        grid = grid or H.grid
        self.grid = grid
        self.flux = HallFluxOperator(H, grid, mu)
        fi = grid.face_interior
        self._div = grid.div[:, fi].tocsr()
        self._grad = grid.grad[fi, :].tocsr()
        self._lap = laplacian(BC_PATTERNS["neumann"], grid.n)

    def matvec(self, phi: np.ndarray) -> np.ndarray:
        return -(self._div @ self.flux.apply(self._grad @ phi))

    def precond(self, r: np.ndarray) -> np.ndarray:
        return self._lap.solve(r.reshape(self._lap.shape, order="F")).ravel(order="F")

    @staticmethod
    def _project(v):
        return v - v.mean()

    def solve(self, G: FaceField, spec: KrylovSpec | None = None,
              x0: ScalarField | None = None) -> NeumannSolution:
        spec = spec or KrylovSpec(method="bicgstab")
        grid = self.grid
        if G.grid != grid:
            raise ValueError("source field lives on another grid")
        scale = float(np.max(np.abs(G.data)))
        if scale == 0.0:
            return NeumannSolution(ScalarField.zeros(grid), FaceField.zeros(grid, no_slip=True), 0, 0.0)
        # the problem is linear: solve for G / scale so tiny sources cannot underflow
        g_int = G.data[grid.face_interior] / scale
        g_norm = float(np.sqrt(np.dot(grid.face_weights, (G.data / scale) ** 2)))
        if x0 is not None:
            x0 = ScalarField(grid, x0.data / scale)
        rhs = self._div @ self.flux.apply(g_int)
        # target ||div F||_L2 <= rtol ||G||_L2 / h, in unweighted euclidean terms
        atol = spec.rtol * g_norm / grid.h / grid.h**1.5
        if spec.method == "cg" and not self.flux.trivial:
            logger.debug("nonsymmetric Neumann operator; using bicgstab instead of cg")
        kernel = cg if (spec.method == "cg" and self.flux.trivial) else bicgstab
        res = kernel(
            self.matvec,
            rhs,
            x0=None if x0 is None else x0.data,
            atol=atol,
            maxiter=spec.maxiter,
            precond=self.precond,
            project=self._project,
        )
        if not res.converged:
            raise ConvergenceError(
                "Neumann solve did not converge", res.residual * grid.h**2.5 / g_norm, res.iterations
            )
        phi = res.x - res.x.mean()
        flux_int = self.flux.apply(self._grad @ phi + g_int)
        residual = _l2_cells(self._div @ flux_int, grid.h)
        logger.debug("Neumann solve: %d iterations, ||div F|| = %.3e", res.iterations, residual)
        return NeumannSolution(
            ScalarField(grid, scale * phi),
            FaceField.from_interior(grid, scale * flux_int),
            res.iterations,
            scale * residual,
        )


def solve_neumann(H: EdgeField, G: FaceField, spec: KrylovSpec | None = None, mu: float = 1.0,
                  x0: ScalarField | None = None) -> ScalarField:
    """Zero-mean ``phi`` with ``div[A^{-1}(mu H)(grad phi + G)] = 0`` and no normal flux."""
    if H.grid != G.grid:
        from hall_steady.grid import GridMismatchError

        raise GridMismatchError(f"grid n={H.grid.n} vs n={G.grid.n}")
    return NeumannOperator(H, G.grid, mu).solve(G, spec, x0).phi


# ---------------------------------------------------------------------------
# div-curl reconstruction
# ---------------------------------------------------------------------------


def _edge_blocks(grid: Grid):
    sizes = [int(np.prod(grid.interior_shape(loc))) for loc in EDGE_LOCS]
    return np.cumsum([0] + sizes)


def edge_laplacian_solve(grid: Grid, rhs_int: np.ndarray, spec: KrylovSpec | None = None) -> np.ndarray:
    """Solve the edge vector Laplacian on interior edges, component by component."""
    offsets = _edge_blocks(grid)
    out = np.empty_like(rhs_int)
    for c, (pattern, loc) in enumerate(zip(EDGE_PATTERNS, EDGE_LOCS)):
        block = rhs_int[offsets[c]:offsets[c + 1]].reshape(grid.interior_shape(loc), order="F")
        sol = solve_poisson_mixed(block, pattern, spec)
        out[offsets[c]:offsets[c + 1]] = sol.ravel(order="F")
    return out


def edge_laplacian_apply(grid: Grid, v_int: np.ndarray) -> np.ndarray:
    offsets = _edge_blocks(grid)
    out = np.empty_like(v_int)
    for c, (pattern, loc) in enumerate(zip(EDGE_PATTERNS, EDGE_LOCS)):
        lap = laplacian(BC_PATTERNS[pattern], grid.n)
        block = v_int[offsets[c]:offsets[c + 1]].reshape(grid.interior_shape(loc), order="F")
        out[offsets[c]:offsets[c + 1]] = lap.apply(block).ravel(order="F")
    return out


def face_laplacian_solve(grid: Grid, rhs_int: np.ndarray) -> np.ndarray:
    """Exact inverse of the no-slip vector Laplacian on interior faces."""
    out = np.empty_like(rhs_int)
    offset = 0
    for pattern, loc in zip(FACE_PATTERNS, FACE_LOCS):
        shape = grid.interior_shape(loc)
        size = int(np.prod(shape))
        lap = laplacian(BC_PATTERNS[pattern], grid.n)
        out[offset:offset + size] = lap.solve(rhs_int[offset:offset + size].reshape(shape, order="F")).ravel(order="F")
        offset += size
    return out


def face_laplacian_apply(grid: Grid, v_int: np.ndarray) -> np.ndarray:
    out = np.empty_like(v_int)
    offset = 0
    for pattern, loc in zip(FACE_PATTERNS, FACE_LOCS):
        shape = grid.interior_shape(loc)
        size = int(np.prod(shape))
        lap = laplacian(BC_PATTERNS[pattern], grid.n)
        out[offset:offset + size] = lap.apply(v_int[offset:offset + size].reshape(shape, order="F")).ravel(order="F")
        offset += size
    return out


def reconstruct_B(J: FaceField, spec: KrylovSpec | None = None,
                  reference_norm: float | None = None) -> EdgeField:
    """Tangential-zero, divergence-free ``B`` with ``curl_e2f B = J``.

    ``B`` solves ``(curl_f2e curl_e2f + grad grad^T) B = curl_f2e J``; when
    ``J`` is divergence-free the gradient part vanishes and ``curl B = J``.
    Compatibility is checked against ``reference_norm`` (default
    ``||J||_L2``), which lets callers measure a nearly-zero flux against the
    data that produced it.
    """
    grid = J.grid
    boundary = np.ones(grid.n_faces, dtype=bool)
    boundary[grid.face_interior] = False
    jnorm = float(np.sqrt(np.dot(grid.face_weights, J.data**2)))
    ref = jnorm if reference_norm is None else max(float(reference_norm), jnorm)
    if ref == 0.0:
        return EdgeField.zeros(grid, tangential_zero=True)
    if np.max(np.abs(J.data[boundary]), initial=0.0) > COMPATIBILITY_TOL * ref:
        raise CompatibilityError("curl data has nonzero boundary-normal flux")
    div_norm = _l2_cells(grid.div @ J.data, grid.h)
    if div_norm > COMPATIBILITY_TOL * ref / grid.h:
        raise CompatibilityError(
            f"curl data is not divergence-free: ||div J|| = {div_norm:.3e} vs ||J||/h = {ref / grid.h:.3e}"
        )
    rhs = (grid.curl_f2e @ J.data)[grid.edge_interior]
    return EdgeField.from_interior(grid, edge_laplacian_solve(grid, rhs, spec))


def project_div_free(E: EdgeField) -> EdgeField:
    """Remove the discrete gradient part of a tangential-zero edge field."""
    grid = E.grid
    ni, ei = grid.node_interior, grid.edge_interior
    G = grid.grad_n2e[ei][:, ni]
    rhs = G.T @ E.data[ei]
    lap = laplacian(BC_PATTERNS["nodes"], grid.n)
    psi = lap.solve(rhs.reshape(grid.interior_shape(NODE), order="F")).ravel(order="F")
    return EdgeField.from_interior(grid, E.data[ei] - G @ psi)


# ---------------------------------------------------------------------------
# discrete Poincare constant
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PoincareEstimate:
    """``||E||_H1 <= constant * ||curl E||_L2`` on div-free tangential-zero fields."""

    n: int
    constant: float
    eigenvalue: float
    iterations: int


@lru_cache(maxsize=16)
def poincare_constant(n: int, tol: float = 1e-10, maxiter: int = 400, seed: int = 0) -> PoincareEstimate:
    """Estimate the discrete Poincare constant by inverse power iteration.

    For div-free tangential-zero edge fields ``|E|_H1^2 = ||curl E||^2``, so
    the constant is ``sqrt(1 + 1/lambda_min)`` with ``lambda_min`` the lowest
    eigenvalue of the curl-curl operator on the div-free subspace.
    """
    grid = Grid(n)
    rng = np.random.default_rng(seed)
    v = project_div_free(EdgeField.from_interior(grid, rng.standard_normal(grid.edge_interior.size)))
    x = v.interior()
    x /= np.linalg.norm(x)
    lam_old = np.inf
    lam = np.inf
    it = 0
    for it in range(1, maxiter + 1):
        y = edge_laplacian_solve(grid, x)
        y = project_div_free(EdgeField.from_interior(grid, y)).interior()
        lam = float(np.dot(x, x) / np.dot(x, y))
        x = y / np.linalg.norm(y)
        if abs(lam - lam_old) <= tol * lam:
            break
        lam_old = lam
    return PoincareEstimate(n, float(np.sqrt(1.0 + 1.0 / lam)), lam, it)
