"""Fixed-point map, Picard iteration and the small-data diagnostics.

``T(w, H) = (u, B)`` is one coupled linear solve with frozen fields.  The
nonlinear solution is sought by iterating ``X_{k+1} = T(X_k)``; the measured
ratio of successive updates and the finite-difference Lipschitz estimate of
``T`` (:func:`contraction_probe`) stand in for the non-constructive smallness
constants of the existence and uniqueness theory.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from hall_steady.config import SolverConfig
from hall_steady.elliptic import (
    BC_PATTERNS,
    NeumannOperator,
    edge_laplacian_solve,
    laplacian,
    poincare_constant,
)
from hall_steady.fields import EdgeField, FaceField, check_same_grid
from hall_steady.grid import Grid
from hall_steady.krylov import ConvergenceError, KrylovSpec
from hall_steady.linsys import (
    HallState,
    LinearizedProblem,
    StagnationError,
    dual_norm_edges,
    dual_norm_faces,
    emf,
    h1_edge,
    h1_face,
    maxwell_residual,
    momentum_residual,
    ops,
    solve_coupled,
)
from hall_steady.operators import norm

logger = logging.getLogger(__name__)

REPORT_COLUMNS = ("iter", "norm_u_H1", "norm_B_H1", "norm_B_W1q", "du_H1", "dB_H1", "ratio")


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------


@dataclass
class IterationRecord:
    iter: int
    norm_u_H1: float
    norm_B_H1: float
    norm_B_W1q: float
    du_H1: float
    dB_H1: float
    ratio: float


@dataclass
class IterationReport:
    """Per-iteration history of the Picard iteration plus the final verdict.

    ``du_H1``/``dB_H1`` are the H1 norms of successive differences and
    ``ratio`` their quotient between consecutive iterations (``nan`` first).
    """

    tol: float
    kappa: float | None = None
    records: list = field(default_factory=list)
    converged: bool = False
    iterations: int = 0
    residual: float = float("nan")
    residual_momentum: float = float("nan")
    residual_maxwell: float = float("nan")
    reason: str = ""

    @property
    def d_set(self) -> bool | None:
        """Whether every iterate stayed in ``{||B||_W1q <= kappa}``."""
        if self.kappa is None:
            return None
        return all(r.norm_B_W1q <= self.kappa for r in self.records)

    @property
    def ratios(self) -> list:
        return [r.ratio for r in self.records]

    def write_csv(self, path) -> None:
        with open(Path(path), "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(REPORT_COLUMNS)
            for r in self.records:
                writer.writerow([r.iter] + [f"{getattr(r, c):.17g}" for c in REPORT_COLUMNS[1:]])

    def summary(self) -> dict:
        return {
            "converged": self.converged,
            "iterations": self.iterations,
            "tol": self.tol,
            "residual": self.residual,
            "residual_momentum": self.residual_momentum,
            "residual_maxwell": self.residual_maxwell,
            "kappa": "none" if self.kappa is None else self.kappa,
            "d_set": "none" if self.d_set is None else self.d_set,
            "reason": self.reason or "none",
        }


@dataclass
class Diagnostics:
    """Data norms, empirical constants and the uniqueness verdict.

    ``f_L2`` is reported in place of the (not computable) ``H^{-1}`` norm,
    of which it is an upper bound.
    """

    f_L2: float
    g_Lq: float
    q: float
    C_hat: float
    C_energy: float
    rho: float | None = None
    d_set: bool | None = None
    energy_ratio: float | None = None
    agreement_H1: float | None = None
    extra: dict = field(default_factory=dict)

    @property
    def margin(self) -> bool:
        return self.rho is not None and self.rho < 1.0

    def summary(self) -> dict:
        out = {
            "f_L2_as_Hminus1_surrogate": self.f_L2,
            "g_Lq": self.g_Lq,
            "q": self.q,
            "C_hat": self.C_hat,
            "C_energy": self.C_energy,
            "rho_hat": "none" if self.rho is None else self.rho,
            "uniqueness_margin": self.margin,
            "d_set": "none" if self.d_set is None else self.d_set,
            "energy_ratio": "none" if self.energy_ratio is None else self.energy_ratio,
            "agreement_H1": "none" if self.agreement_H1 is None else self.agreement_H1,
        }
        out.update(self.extra)
        return out


# ---------------------------------------------------------------------------
# the map T and its iteration
# ---------------------------------------------------------------------------


def apply_T(w: FaceField, H: EdgeField, f: FaceField, g: FaceField, config: SolverConfig,
            initial: HallState | None = None) -> HallState:
    """One coupled linear solve with ``(w, H)`` frozen."""
    state = solve_coupled(LinearizedProblem(w, H, f, g, config), initial)
    state.meta["norm_B_W1q"] = norm(state.B, "W1q", q=config.q1)
    return state


def nonlinear_residual(state: HallState, f: FaceField, g: FaceField, config: SolverConfig):
    """``H^{-1}`` norms of the momentum and Maxwell residuals at ``state``.

    Both equations are tested against every interior unknown (no
    divergence-free restriction), with the transport and Hall coefficients
    evaluated at the state itself.
    """
    grid = state.grid
    r_u = momentum_residual(state.u, state.p, state.u, state.B, state.B, f)
    G = g + emf(state.u, state.B)
    r_B = maxwell_residual(state.B, state.B, G, config.mu)
    return dual_norm_faces(grid, r_u), dual_norm_edges(grid, r_B)


def solve_hall_mhd(f: FaceField, g: FaceField, config: SolverConfig,
                   initial: HallState | None = None) -> tuple[HallState, IterationReport]:
    """Picard iteration ``X_{k+1} = T(X_k)`` from ``initial`` (default zero).

    Stops when ``||u_{k+1}-u_k||_H1 + ||B_{k+1}-B_k||_H1 <= tol max(1, ||X||)``.
    Convergence is only claimed when the nonlinear residual is also below
    ``10 tol max(1, ||X||)``.  Failure of an inner solve ends the iteration
    with ``converged = False`` and the best iterate so far.
    """
    grid = check_same_grid(f, g)
    if grid.n != config.n:
        config = config.with_(n=grid.n)
    state = initial or HallState.zeros(grid)
    report = IterationReport(tol=config.outer_tol, kappa=config.kappa)
    best, best_update = state, np.inf
    prev_update = None
    for k in range(1, config.max_outer + 1):
        try:
            new = apply_T(state.u, state.B, f, g, config, initial=state)
        except (StagnationError, ConvergenceError) as exc:
            report.reason = f"inner solve failed: {exc}"
            logger.warning("Picard iteration %d: %s", k, exc)
            break
        du, dB = h1_face(new.u - state.u), h1_edge(new.B - state.B)
        update = du + dB
        ratio = update / prev_update if prev_update else float("nan")
        report.records.append(
            IterationRecord(k, h1_face(new.u), h1_edge(new.B), new.meta["norm_B_W1q"], du, dB, ratio)
        )
        report.iterations = k
        state, prev_update = new, update
        logger.info("Picard %d: du=%.3e dB=%.3e ratio=%.3e", k, du, dB, ratio)
        if update < best_update:
            best, best_update = new, update
        if update <= config.outer_tol * max(1.0, state.norm_H1()):
            best = state
            report.reason = "update below tolerance"
            break
        if not np.isfinite(update):
            report.reason = "non-finite update"
            break
    else:
        report.reason = "max_outer reached"
    res_u, res_B = nonlinear_residual(best, f, g, config)
    report.residual_momentum, report.residual_maxwell = res_u, res_B
    report.residual = res_u + res_B
    scale = max(1.0, best.norm_H1())
    report.converged = report.reason == "update below tolerance" and report.residual <= 10 * config.outer_tol * scale
    if report.reason == "update below tolerance" and not report.converged:
        report.reason = "update below tolerance but nonlinear residual too large"
    return best, report


# ---------------------------------------------------------------------------
# perturbations, contraction and uniqueness
# ---------------------------------------------------------------------------


def random_admissible(grid: Grid, rng: np.random.Generator, size: float) -> HallState:
    """Smooth random ``(u, B)``: no-slip divergence-free ``u``, tangential-zero div-free ``B``.

    ``u`` is the curl of a smoothed random edge potential and ``B`` the
    div-curl reconstruction of a smoothed random curl; the pair is scaled to
    ``||u||_H1 + ||B||_H1 = size``.
    """
    o = ops(grid)
    psi = edge_laplacian_solve(grid, rng.standard_normal(o.ei.size))
    u = FaceField.from_interior(grid, o.curl_i @ psi)
    B = EdgeField.from_interior(grid, edge_laplacian_solve(grid, o.curl_i.T @ rng.standard_normal(o.fi.size)))
    total = h1_face(u) + h1_edge(B)
    s = size / total if total > 0 else 0.0
    return HallState(s * u, HallState.zeros(grid).p, s * B)


def state_distance(a: HallState, b: HallState) -> float:
    return h1_face(a.u - b.u) + h1_edge(a.B - b.B)


@dataclass
class ProbeResult:
    rho: float
    ratios: list
    delta: float

    @property
    def margin(self) -> bool:
        return self.rho < 1.0


def contraction_probe(state: HallState, f: FaceField, g: FaceField, config: SolverConfig,
                      trials: int | None = None) -> ProbeResult:
    """Finite-difference Lipschitz estimate of ``T`` around ``state``.

    ``rho = max_t ||T(X + d_t) - T(X)||_H1 / ||d_t||_H1`` over seeded smooth
    admissible perturbations with ``||d_t||_H1 = 1e-3 max(1, ||X||_H1)``.
    """
    trials = trials or config.probe_trials
    grid = state.grid
    delta = 1e-3 * max(1.0, state.norm_H1())
    base = apply_T(state.u, state.B, f, g, config, initial=state)
    ratios = []
    for t in range(trials):
        rng = np.random.default_rng([config.seed, t])
        d = random_admissible(grid, rng, delta)
        moved = apply_T(state.u + d.u, state.B + d.B, f, g, config, initial=base)
        ratios.append(state_distance(moved, base) / delta)
    return ProbeResult(max(ratios), ratios, delta)


def multi_start(f: FaceField, g: FaceField, config: SolverConfig, reference: HallState | None = None,
                relative_size: float = 0.1):
    """Solve again from a perturbed start; return ``(state, report, distance)``.

    The start is zero plus a random admissible field of H1 size
    ``relative_size * ||reference||_H1`` (or ``relative_size`` if the
    reference vanishes).
    """
    grid = check_same_grid(f, g)
    if reference is None:
        reference, _ = solve_hall_mhd(f, g, config)
    size = relative_size * (reference.norm_H1() or 1.0)
    start = random_admissible(grid, np.random.default_rng([config.seed, 7919]), size)
    other, report = solve_hall_mhd(f, g, config, initial=start)
    return other, report, state_distance(other, reference)


@dataclass
class SweepPoint:
    amplitude: float
    rho: float
    solution_size: float
    converged: bool

    @property
    def rho_per_size(self) -> float:
        return self.rho / self.solution_size if self.solution_size > 0 else float("nan")


def amplitude_sweep(config: SolverConfig, amplitudes=(1e-3, 1e-2, 1e-1), forcing=None) -> list:
    """Contraction estimate across forcing amplitudes.

    ``solution_size`` is ``||u||_H1 + ||B||_W1q``; a roughly constant
    ``rho / solution_size`` indicates the linear dependence expected from the
    uniqueness estimate.
    """
    from hall_steady.mms import ManufacturedSolution, forcing_from_solution

    grid = Grid(config.n)
    points = []
    for a in amplitudes:
        cfg = config.with_(amplitude=a)
        if forcing is None:
            sol = ManufacturedSolution.from_spec(cfg.forcing, cfg.mu)
            f, g = forcing_from_solution(sol, grid, cfg.forcing.mode)
        else:
            f, g = forcing(a)
        state, report = solve_hall_mhd(f, g, cfg)
        probe = contraction_probe(state, f, g, cfg)
        size = h1_face(state.u) + norm(state.B, "W1q", q=cfg.q1)
        points.append(SweepPoint(a, probe.rho, size, report.converged))
    return points


def is_monotone_increasing(values) -> bool:
    return all(b > a for a, b in zip(values, values[1:]))


# ---------------------------------------------------------------------------
# decomposition consistency and smallness diagnostics
# ---------------------------------------------------------------------------


@dataclass
class DecompositionReport:
    relative_residual: float
    phi_agreement: float | None
    truncation_estimate: float

    def passes(self, solver_tol: float) -> bool:
        return self.relative_residual <= 10 * solver_tol + 5 * self.truncation_estimate


def decomposition_check(state: HallState, f: FaceField, g: FaceField, config: SolverConfig | None = None,
                        spec: KrylovSpec | None = None) -> DecompositionReport:
    """Recompute ``curl B`` from the potential formulation at the state.

    Solves ``div[A^{-1}(B)(grad phi + u x B + g)] = 0`` with zero normal flux
    and compares the flux with ``curl_e2f B``.  The truncation estimate is
    ``h^2`` (second-order scheme, unit-scale solution).
    """
    grid = state.grid
    mu = config.mu if config else 1.0
    spec = spec or KrylovSpec("bicgstab", 1e-12, 1000)
    G = g + emf(state.u, state.B)
    sol = NeumannOperator(state.B, grid, mu).solve(G, spec)
    o = ops(grid)
    curl_B = (grid.curl_e2f @ state.B.data)[o.fi]
    diff = np.linalg.norm(curl_B - sol.flux.interior())
    scale = np.linalg.norm(curl_B)
    rel = 0.0 if diff == 0.0 else float(diff / scale) if scale > 0 else float("inf")
    agreement = None
    if state.phi is not None:
        # potentials are compared up to a constant, in units of the source size
        a = state.phi.data - state.phi.data.mean()
        b = sol.phi.data - sol.phi.data.mean()
        g_norm = float(np.sqrt(np.dot(grid.face_weights, G.data**2)))
        gap = float(np.linalg.norm(a - b)) * grid.h**1.5
        agreement = gap / g_norm if g_norm > 0 else gap
    return DecompositionReport(rel, agreement, grid.h**2)


def energy_constant(n: int, q: float) -> float:
    """Constant of the discrete a-priori bound ``||u||_H1 + ||B||_H1 <= C (||f||_L2 + ||g||_Lq)``.

    Testing the fixed-point equations with ``(u, B)`` removes transport and
    coupling terms exactly, leaving ``|u|_1^2 + ||curl B||^2 <= <f, u> + <g, curl B>``.
    The Poincare constants of both spaces and the componentwise ``L2 <= 3^{1/2-1/q} Lq``
    bound then give ``sqrt(2) max(C_u, C_B) 3^{1/2-1/q}``.
    """
    grid = Grid(n)
    c_u = np.sqrt(1.0 + 1.0 / laplacian(BC_PATTERNS["x-face"], grid.n).min_eigenvalue)
    c_b = poincare_constant(n).constant
    return float(np.sqrt(2.0) * max(c_u, c_b) * 3.0 ** (0.5 - 1.0 / q))


def smallness_report(f: FaceField, g: FaceField, config: SolverConfig, report: IterationReport | None = None,
                     state: HallState | None = None, probe: ProbeResult | None = None) -> Diagnostics:
    grid = check_same_grid(f, g)
    f_l2 = norm(f.with_zero_boundary(), "L2")
    g_lq = norm(g, "Lq", q=config.q)
    diag = Diagnostics(
        f_L2=f_l2,
        g_Lq=g_lq,
        q=config.q,
        C_hat=poincare_constant(grid.n).constant,
        C_energy=energy_constant(grid.n, config.q),
    )
    if report is not None:
        diag.d_set = report.d_set if report.d_set is not None else None
    if state is not None and f_l2 + g_lq > 0:
        diag.energy_ratio = state.norm_H1() / (diag.C_energy * (f_l2 + g_lq))
    elif state is not None:
        diag.energy_ratio = 0.0
    if probe is not None:
        diag.rho = probe.rho
    return diag
