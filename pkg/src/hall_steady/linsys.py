"""Linearized Hall-MHD system with frozen transport velocity and magnetic field.

Given frozen ``(w, H)`` the unknowns ``(u, p, B)`` solve::

    -Lap u + (w . grad) u + grad p - curl B x H = f,     div u = 0,   u = 0 on the wall
    curl(A(mu H) curl B) - curl(u x H) = curl g,          div B = 0,   B x nu = 0

Both cross products are collocated at cell centres with the same averaging
pair (``P`` faces/edges to centres, ``Pstar`` its weighted adjoint), so the
coupling terms cancel exactly in the energy identity::

    <Pstar[(P curl B) x Hc], u> + <Pstar[(P u) x Hc], curl B> = 0

Velocity unknowns live on interior faces, where the vector Laplacian with
no-slip walls is diagonalised by fast sine transforms; the pressure is
eliminated by conjugate gradients on its Schur complement.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import scipy.sparse as sp

from hall_steady.config import SolverConfig
from hall_steady.elliptic import (
    HallFluxOperator,
    NeumannOperator,
    edge_laplacian_apply,
    edge_laplacian_solve,
    face_laplacian_apply,
    face_laplacian_solve,
    reconstruct_B,
)
from hall_steady.fields import EdgeField, FaceField, ScalarField, check_same_grid
from hall_steady.grid import CENTER, FACE_LOCS, Grid, avg_c2n, avg_n2c, diff_c2n, diff_n2c
from hall_steady.hallmat import collocated, uncollocated
from hall_steady.krylov import ConvergenceError, KrylovSpec, SolverError, bicgstab, cg

logger = logging.getLogger(__name__)

DIV_FREE_TOL = 1e-8


class StagnationError(SolverError):
    """A fixed-point style inner loop stopped contracting."""

    def __init__(self, message: str, history: list):
        super().__init__(f"{message}; last updates {[f'{v:.3e}' for v in history[-5:]]}")
        self.history = list(history)


# ---------------------------------------------------------------------------
# state containers
# ---------------------------------------------------------------------------


@dataclass
class HallState:
    """Velocity, pressure and magnetic field on one grid."""

    u: FaceField
    p: ScalarField
    B: EdgeField
    phi: ScalarField | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        check_same_grid(self.u, self.p, self.B)

    @property
    def grid(self) -> Grid:
        return self.u.grid

    @classmethod
    def zeros(cls, grid: Grid) -> "HallState":
        return cls(
            FaceField.zeros(grid, no_slip=True),
            ScalarField.zeros(grid),
            EdgeField.zeros(grid, tangential_zero=True),
        )

    def norm_H1(self) -> float:
        return h1_face(self.u) + h1_edge(self.B)


@dataclass
class LinearizedProblem:
    """Frozen ``(w, H)`` together with the data ``(f, g)``."""

    w: FaceField
    H: EdgeField
    f: FaceField
    g: FaceField
    config: SolverConfig

    def __post_init__(self):
        grid = check_same_grid(self.w, self.H, self.f, self.g)
        if not self.H.tangential_zero:
            raise ValueError("frozen magnetic field must be tangential-zero")
        if not self.w.no_slip:
            raise ValueError("frozen velocity must be no-slip")
        div_w = float(np.linalg.norm(grid.div @ self.w.data)) * grid.h**1.5
        scale = h1_face(self.w)
        if div_w > DIV_FREE_TOL * max(scale, 1e-300):
            raise ValueError(f"frozen velocity is not divergence-free (||div w|| = {div_w:.3e})")

    @property
    def grid(self) -> Grid:
        return self.w.grid


# ---------------------------------------------------------------------------
# grid-level operators on interior unknowns
# ---------------------------------------------------------------------------


class _Ops:
    def __init__(self, grid: Grid):
        self.grid = grid
        fi = grid.face_interior
        self.fi = fi
        self.ei = grid.edge_interior
        self.div_i = grid.div[:, fi].tocsr()
        self.grad_i = grid.grad[fi, :].tocsr()
        self.curl_i = grid.curl_e2f[fi][:, self.ei].tocsr()
        self.p0 = grid.face_to_center[:, fi].tocsr()
        self.pstar_i = grid.center_to_face[fi, :].tocsr()
        self.conv_parts = _convection_parts(grid)

    def hc(self, H: EdgeField, mu: float = 1.0) -> np.ndarray:
        return mu * collocated(self.grid, self.grid.edge_to_center @ H.data)


@lru_cache(maxsize=8)
def ops(grid: Grid) -> _Ops:
    return _Ops(grid)


def h1_face(u) -> float:
    """H1 norm of a no-slip face field (``u`` or its interior vector)."""
    if isinstance(u, FaceField):
        grid, v = u.grid, u.interior()
    else:
        raise TypeError("expected a FaceField")
    return _h1(grid, v, face_laplacian_apply)


def h1_edge(B) -> float:
    """H1 norm of a tangential-zero edge field."""
    return _h1(B.grid, B.interior(), edge_laplacian_apply)


def _h1(grid, v, lap_apply) -> float:
    if not np.any(v):
        return 0.0
    return float(np.sqrt(grid.h**3 * (np.dot(v, v) + np.dot(v, lap_apply(grid, v)))))


# ---------------------------------------------------------------------------
# coupling terms
# ---------------------------------------------------------------------------


def lorentz_force(B: EdgeField, H: EdgeField) -> FaceField:
    """``Pstar[(P curl_e2f B) x Hc]`` on interior faces (zero on the wall)."""
    grid = check_same_grid(B, H)
    o = ops(grid)
    jc = collocated(grid, o.p0 @ (grid.curl_e2f @ B.data)[o.fi])
    return FaceField.from_interior(grid, o.pstar_i @ uncollocated(np.cross(jc, o.hc(H))))


def emf(u: FaceField, H: EdgeField) -> FaceField:
    """Induction source ``Pstar[(P u) x Hc]`` on all faces."""
    grid = check_same_grid(u, H)
    uc = collocated(grid, grid.face_to_center @ u.data)
    return FaceField(grid, grid.center_to_face @ uncollocated(np.cross(uc, ops(grid).hc(H))))


def _convection_parts(grid: Grid):
    """Static averaging/difference factors of the divergence-form transport."""
    n, h = grid.n, grid.h
    parts = []
    for a in range(3):
        row = []
        for b in range(3):
            if a == b:
                avg_u = grid._axis_op(FACE_LOCS[a], {a: avg_n2c(n)})
                avg_w = avg_u
                diff = grid._axis_op(CENTER, {a: diff_c2n(n, h, "neumann")})
            else:
                loc = list(FACE_LOCS[a])
                loc[b] = "n"
                avg_u = grid._axis_op(FACE_LOCS[a], {b: avg_c2n(n, "copy")})
                avg_w = grid._axis_op(FACE_LOCS[b], {a: avg_c2n(n, "copy")})
                diff = grid._axis_op(tuple(loc), {b: diff_n2c(n, h)})
            row.append((avg_u, avg_w, diff))
        parts.append(row)
    return parts


def convection_matrix(w: FaceField) -> sp.csr_matrix:
    """Skew-symmetric transport ``(w . grad)`` on interior faces.

    The conservative form ``div(w u)`` is built from face averages with zero
    wall flux; its skew part is used, so ``<C u, u> = 0`` holds exactly and
    agrees with the advective form to second order when ``div w = 0``.
    """
    grid = w.grid
    o = ops(grid)
    wcomp = [c.ravel(order="F") for c in w.components]
    blocks = []
    for a in range(3):
        acc = None
        for b in range(3):
            avg_u, avg_w, diff = o.conv_parts[a][b]
            term = diff @ sp.diags(avg_w @ wcomp[b]) @ avg_u
            acc = term if acc is None else acc + term
        blocks.append(acc)
    cd = sp.block_diag(blocks, format="csr")[o.fi][:, o.fi]
    return (0.5 * (cd - cd.T)).tocsr()


# ---------------------------------------------------------------------------
# Stokes
# ---------------------------------------------------------------------------


@dataclass
class StokesResult:
    u: np.ndarray
    p: np.ndarray
    iterations: int
    floor: float = 0.0


def solve_stokes(grid: Grid, rhs_int: np.ndarray, rtol: float, maxiter: int = 500,
                 p0: np.ndarray | None = None) -> StokesResult:
    """``-Lap u + grad p = rhs``, ``div u = 0`` on interior faces.

    CG on the pressure Schur complement ``Div L^{-1} Div^T`` (positive
    definite on zero-mean pressures).  Its residual is ``-div u``, so the
    stopping test is directly ``||div u|| <= rtol max(||u||_H1, ||L^{-1} rhs||_H1 / 10)``.
    """
    o = ops(grid)
    h15 = grid.h**1.5
    if not np.any(rhs_int):
        return StokesResult(np.zeros_like(rhs_int), np.zeros(grid.n_cells), 0)
    u_free = face_laplacian_solve(grid, rhs_int)
    b = -(o.div_i @ u_free)

    def velocity(p):
        return u_free - face_laplacian_solve(grid, o.grad_i @ p)

    def matvec(p):
        return o.div_i @ face_laplacian_solve(grid, o.div_i.T @ p)

    def project(v):
        return v - v.mean()

    # when the forcing is nearly a pure gradient u is tiny and ||div u|| sits at
    # round-off of the unconstrained solve, so measure against a fraction of it
    floor = 0.1 * _h1(grid, u_free, face_laplacian_apply)
    p = np.zeros(grid.n_cells) if p0 is None else np.asarray(p0, dtype=float)
    u = velocity(p)
    scale = max(_h1(grid, u, face_laplacian_apply), floor)
    total = 0
    for _ in range(4):
        res = cg(matvec, b, x0=p, atol=rtol * scale / h15, maxiter=maxiter, project=project)
        total += res.iterations
        p = res.x - res.x.mean()
        u = velocity(p)
        scale_now = max(_h1(grid, u, face_laplacian_apply), floor)
        if np.linalg.norm(o.div_i @ u) * h15 <= rtol * scale_now:
            return StokesResult(u, p, total, floor)
        scale = 0.5 * scale_now
    raise ConvergenceError(
        "pressure Schur complement iteration did not converge",
        float(np.linalg.norm(o.div_i @ u) * h15 / max(scale, 1e-300)),
        total,
    )


def solve_momentum(w: FaceField, H: EdgeField, B: EdgeField, f: FaceField,
                   spec: KrylovSpec | None = None,
                   initial: tuple[FaceField, ScalarField] | None = None,
                   convection: sp.spmatrix | None = None):
    """Velocity and zero-mean pressure of the linearized momentum equation.

    Transport is handled by defect correction around the Stokes solve,
    ``u_{k+1} = Stokes(f + curl B x H - C(w) u_k)``, which contracts when
    the frozen velocity is small compared to unit viscosity.  A prebuilt
    ``convection`` matrix for ``w`` may be passed to skip its assembly.
    """
    spec = spec or KrylovSpec()
    grid = check_same_grid(w, H, B, f)
    rhs = f.interior() + lorentz_force(B, H).interior()
    conv = convection
    if conv is None and np.any(w.data):
        conv = convection_matrix(w)
    if initial is None:
        u = np.zeros(grid.face_interior.size)
        p = None
    else:
        u, p = initial[0].interior().copy(), initial[1].data
    if conv is None:
        st = solve_stokes(grid, rhs, spec.rtol, spec.maxiter, p0=p)
        return FaceField.from_interior(grid, st.u), ScalarField(grid, st.p)
    history = []
    for k in range(spec.maxiter):
        st = solve_stokes(grid, rhs - conv @ u, spec.rtol, spec.maxiter, p0=p)
        step = _h1(grid, st.u - u, face_laplacian_apply)
        u, p = st.u, st.p
        history.append(step)
        # the Stokes solve is only accurate to rtol relative to its floor
        size = max(_h1(grid, u, face_laplacian_apply), st.floor, 1e-300)
        if step <= spec.rtol * size or step == 0.0:
            return FaceField.from_interior(grid, u), ScalarField(grid, p)
        # near the round-off floor the ratio is noise; only switch on a real stall
        if k >= 2 and history[-1] > 0.9 * history[-2] and step > 1e3 * spec.rtol * size:
            logger.debug("defect correction stalled after %d steps; switching to bicgstab", k + 1)
            break
    return _momentum_krylov(grid, conv, rhs, u, spec, history)


def _momentum_krylov(grid, conv, rhs, u0, spec, history):
    """Krylov-accelerated defect correction: ``(I + S C) u = S rhs``.

    ``S`` is the Stokes solution operator, so every product costs one Stokes
    solve; used when plain defect correction does not contract.
    """
    def stokes_u(r):
        return solve_stokes(grid, r, spec.rtol, spec.maxiter).u

    b = stokes_u(rhs)
    bnorm = float(np.linalg.norm(b))
    res = bicgstab(lambda v: v + stokes_u(conv @ v), b, x0=u0, atol=max(spec.rtol, 1e-10) * bnorm,
                   maxiter=spec.maxiter)
    if not res.converged:
        raise StagnationError("transport solve did not converge", history + res.history)
    st = solve_stokes(grid, rhs - conv @ res.x, spec.rtol, spec.maxiter)
    return FaceField.from_interior(grid, st.u), ScalarField(grid, st.p)


def momentum_residual(u: FaceField, p: ScalarField, w: FaceField, H: EdgeField,
                      B: EdgeField, f: FaceField) -> np.ndarray:
    """Interior-face residual ``-Lap u + C(w) u + grad p - curl B x H - f``."""
    grid = u.grid
    o = ops(grid)
    r = face_laplacian_apply(grid, u.interior()) + o.grad_i @ p.data
    r -= f.interior() + lorentz_force(B, H).interior()
    if np.any(w.data):
        r += convection_matrix(w) @ u.interior()
    return r


def dual_norm_faces(grid: Grid, r_int: np.ndarray) -> float:
    """``H^{-1}`` norm of an interior-face residual (via the exact Laplacian inverse)."""
    return float(np.sqrt(max(grid.h**3 * np.dot(r_int, face_laplacian_solve(grid, r_int)), 0.0)))


def dual_norm_edges(grid: Grid, r_int: np.ndarray) -> float:
    return float(np.sqrt(max(grid.h**3 * np.dot(r_int, edge_laplacian_solve(grid, r_int)), 0.0)))


# ---------------------------------------------------------------------------
# Maxwell-type subproblem
# ---------------------------------------------------------------------------


class MaxwellSolver:
    """``curl(A(mu H) curl B) = curl G`` by the potential route.

    The Neumann problem for ``phi`` yields the flux ``J = A^{-1}(grad phi + G)``
    (divergence-free, zero normal trace); ``B`` is then the div-curl
    reconstruction of ``J``.  Built once per frozen ``H``.
    """

    def __init__(self, H: EdgeField, mu: float = 1.0):
        self.grid = H.grid
        self.H = H
        self.mu = mu
        self.neumann = NeumannOperator(H, H.grid, mu)

    def solve(self, G: FaceField, spec: KrylovSpec | None = None,
              phi0: ScalarField | None = None) -> tuple[EdgeField, ScalarField]:
        spec = spec or KrylovSpec(method="bicgstab")
        if spec.method != "bicgstab":
            spec = KrylovSpec("bicgstab", spec.rtol, spec.maxiter)
        sol = self.neumann.solve(G, spec, x0=phi0)
        g_norm = float(np.sqrt(np.dot(self.grid.face_weights, G.data**2)))
        B = reconstruct_B(sol.flux, KrylovSpec("cg", min(spec.rtol, 1e-12), spec.maxiter), reference_norm=g_norm)
        return B, sol.phi


def solve_maxwell_type(H: EdgeField, G: FaceField, spec: KrylovSpec | None = None,
                       mu: float = 1.0, phi0: ScalarField | None = None):
    """Return ``(B, phi)``; ``||curl B|| <= ||G||`` holds by construction."""
    check_same_grid(H, G)
    return MaxwellSolver(H, mu).solve(G, spec, phi0)


def hall_forward(H: EdgeField, J: FaceField, mu: float = 1.0, rtol: float = 1e-13) -> np.ndarray:
    """Interior-face values of the discrete ``A(mu H) J`` (inverse of the flux map)."""
    flux = HallFluxOperator(H, H.grid, mu)
    return flux.apply_inverse(J.interior(), rtol=rtol)


def maxwell_residual(B: EdgeField, H: EdgeField, G: FaceField, mu: float = 1.0) -> np.ndarray:
    """Interior-edge residual ``curl_f2e(A(mu H) curl B - G)``."""
    o = ops(B.grid)
    J = FaceField.from_interior(B.grid, (B.grid.curl_e2f @ B.data)[o.fi])
    xi = hall_forward(H, J, mu)
    return o.curl_i.T @ (xi - G.interior())


# ---------------------------------------------------------------------------
# coupled linear solve
# ---------------------------------------------------------------------------


def inner_spec(config: SolverConfig, method: str = "cg") -> KrylovSpec:
    """Sub-solve tolerance, two digits tighter than the coupling tolerance."""
    return KrylovSpec(method, max(config.inner_rtol * 1e-2, 1e-14), config.max_inner)


SWEEP_FLOOR = 1e-6


def solve_coupled(prob: LinearizedProblem, initial: HallState | None = None) -> HallState:
    """Block Gauss-Seidel between the momentum and Maxwell-type solves.

    Sweeps stop when the H1 update of ``(u, B)`` drops below
    ``inner_rtol * max(||(u, B)||_H1, SWEEP_FLOOR)``; the floor stops sweeps
    that decay geometrically towards a zero solution before they underflow.  Ten consecutive sweeps whose update
    shrinks by less than 1 % raise :class:`StagnationError`.
    """
    cfg = prob.config
    grid = prob.grid
    state = initial or HallState.zeros(grid)
    u, p, B, phi = state.u, state.p, state.B, state.phi
    mspec = inner_spec(cfg, "cg")
    xspec = inner_spec(cfg, "bicgstab")
    maxwell = MaxwellSolver(prob.H, cfg.mu)
    conv = convection_matrix(prob.w) if np.any(prob.w.data) else None
    history = []
    slow = 0
    for sweep in range(1, cfg.max_inner + 1):
        u_new, p = solve_momentum(prob.w, prob.H, B, prob.f, mspec, initial=(u, p), convection=conv)
        G = prob.g + emf(u_new, prob.H)
        B_new, phi = maxwell.solve(G, xspec, phi0=phi)
        update = h1_face(u_new - u) + h1_edge(B_new - B)
        size = h1_face(u_new) + h1_edge(B_new)
        u, B = u_new, B_new
        history.append(update)
        logger.debug("coupled sweep %d: update %.3e, size %.3e", sweep, update, size)
        if update <= cfg.inner_rtol * max(size, SWEEP_FLOOR):
            return HallState(u, p, B, phi, {"sweeps": sweep, "update": update})
        if len(history) >= 2 and history[-1] > 0.99 * history[-2]:
            slow += 1
            if slow >= 10:
                raise StagnationError("block Gauss-Seidel stagnated", history)
        else:
            slow = 0
    raise ConvergenceError("block Gauss-Seidel hit max_inner", history[-1], len(history))
