"""Manufactured solutions built from separable trigonometric terms.

Every expression is a sum of products ``c * f1(x) f2(y) f3(z)`` with each
factor one of ``sin(m pi t)``, ``cos(m pi t)`` or ``sin^2(m pi t)``.  That
family is closed under differentiation::

    d/dt sin(m pi t)   =  m pi cos(m pi t)
    d/dt cos(m pi t)   = -m pi sin(m pi t)
    d/dt sin^2(m pi t) =  m pi sin(2 m pi t)

so all derivatives needed for the forcing are exact closed forms.

The exact fields are

* ``B* = a (alpha cos sin sin, beta sin cos sin, gamma sin sin cos)`` with
  mode numbers ``m``; ``m . (alpha, beta, gamma) = 0`` makes it
  divergence-free and every tangential component vanishes on the cube faces;
* ``u* = curl Psi`` with ``Psi_i = a psi_i sin^2(pi x) sin^2(pi y) sin^2(pi z)``,
  divergence-free and zero on the boundary together with its gradient's
  tangential part;
* ``p* = a cos(pi x) cos(pi y) cos(pi z)`` (zero mean).
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from hall_steady.config import ForcingSpec, SolverConfig
from hall_steady.elliptic import face_laplacian_apply, project_div_free
from hall_steady.fields import EdgeField, FaceField, ScalarField
from hall_steady.grid import CENTER, EDGE_LOCS, FACE_LOCS, Grid
from hall_steady.linsys import (
    HallState,
    convection_matrix,
    emf,
    hall_forward,
    lorentz_force,
    ops,
)
from hall_steady.operators import norm

logger = logging.getLogger(__name__)

FACTOR_KINDS = ("sin", "cos", "sin2")


# ---------------------------------------------------------------------------
# separable trigonometric expressions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Factor:
    kind: str
    m: int

    def __call__(self, t):
        arg = self.m * np.pi * np.asarray(t, dtype=float)
        if self.kind == "sin":
            return np.sin(arg)
        if self.kind == "cos":
            return np.cos(arg)
        return np.sin(arg) ** 2

    def derivative(self) -> tuple[float, "Factor"]:
        c = self.m * np.pi
        if self.kind == "sin":
            return c, Factor("cos", self.m)
        if self.kind == "cos":
            return -c, Factor("sin", self.m)
        return c, Factor("sin", 2 * self.m)


@dataclass(frozen=True)
class Term:
    coeff: float
    factors: tuple[Factor, Factor, Factor]

    def __call__(self, X, Y, Z):
        fx, fy, fz = self.factors
        return self.coeff * fx(X) * fy(Y) * fz(Z)

    def diff(self, axis: int) -> "Term":
        c, df = self.factors[axis].derivative()
        factors = list(self.factors)
        factors[axis] = df
        return Term(self.coeff * c, tuple(factors))


@dataclass(frozen=True)
class TrigExpr:
    """Finite sum of separable terms; the empty sum is the zero function."""

    terms: tuple[Term, ...] = ()

    def __call__(self, X, Y, Z):
        out = np.zeros(np.broadcast(X, Y, Z).shape)
        for t in self.terms:
            out = out + t(X, Y, Z)
        return out

    def diff(self, axis: int) -> "TrigExpr":
        return TrigExpr(tuple(t.diff(axis) for t in self.terms if t.coeff != 0.0))

    def __add__(self, other: "TrigExpr") -> "TrigExpr":
        return TrigExpr(self.terms + other.terms)

    def __sub__(self, other: "TrigExpr") -> "TrigExpr":
        return self + (-1.0) * other

    def __mul__(self, s: float) -> "TrigExpr":
        return TrigExpr(tuple(Term(s * t.coeff, t.factors) for t in self.terms))

    __rmul__ = __mul__

    def grad(self) -> "VectorExpr":
        return VectorExpr(tuple(self.diff(a) for a in range(3)))

    def laplacian(self) -> "TrigExpr":
        out = TrigExpr()
        for a in range(3):
            out = out + self.diff(a).diff(a)
        return out


def term(coeff: float, kinds, modes) -> TrigExpr:
    return TrigExpr((Term(float(coeff), tuple(Factor(k, int(m)) for k, m in zip(kinds, modes))),))


ZERO = TrigExpr()


@dataclass(frozen=True)
class VectorExpr:
    comps: tuple[TrigExpr, TrigExpr, TrigExpr]

    def __call__(self, X, Y, Z):
        return np.stack([c(X, Y, Z) for c in self.comps])

    def div(self) -> TrigExpr:
        return self.comps[0].diff(0) + self.comps[1].diff(1) + self.comps[2].diff(2)

    def curl(self) -> "VectorExpr":
        c = self.comps
        return VectorExpr(
            (
                c[2].diff(1) - c[1].diff(2),
                c[0].diff(2) - c[2].diff(0),
                c[1].diff(0) - c[0].diff(1),
            )
        )

    def laplacian(self) -> "VectorExpr":
        return VectorExpr(tuple(c.laplacian() for c in self.comps))

    def jacobian(self) -> tuple[tuple[TrigExpr, ...], ...]:
        """``J[i][j] = d comp_i / d x_j``."""
        return tuple(tuple(c.diff(j) for j in range(3)) for c in self.comps)

    @property
    def is_zero(self) -> bool:
        return all(not c.terms for c in self.comps)


ZERO_VECTOR = VectorExpr((ZERO, ZERO, ZERO))


def eigenmode_B(a: float, coeffs, modes=(1, 1, 1)) -> VectorExpr:
    """Cavity mode ``a (alpha cos sin sin, beta sin cos sin, gamma sin sin cos)``."""
    alpha, beta, gamma = (float(c) for c in coeffs)
    m = tuple(int(k) for k in modes)
    dot = m[0] * alpha + m[1] * beta + m[2] * gamma
    if abs(dot) > 1e-12 * max(1.0, abs(alpha), abs(beta), abs(gamma)):
        raise ValueError(f"m . (alpha, beta, gamma) = {dot} must vanish")
    return VectorExpr(
        (
            term(a * alpha, ("cos", "sin", "sin"), m),
            term(a * beta, ("sin", "cos", "sin"), m),
            term(a * gamma, ("sin", "sin", "cos"), m),
        )
    )


def stream_function(a: float, potential=(1.0, 1.0, 1.0)) -> VectorExpr:
    return VectorExpr(tuple(term(a * psi, ("sin2",) * 3, (1, 1, 1)) for psi in potential))


def noslip_u(a: float, potential=(1.0, 1.0, 1.0)) -> VectorExpr:
    """``curl Psi``; vanishes on the whole boundary."""
    return stream_function(a, potential).curl()


def pressure(a: float) -> TrigExpr:
    return term(a, ("cos", "cos", "cos"), (1, 1, 1))


# ---------------------------------------------------------------------------
# manufactured solution
# ---------------------------------------------------------------------------


def _cross(a, b):
    return np.stack(
        [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
    )


@dataclass(frozen=True)
class ManufacturedSolution:
    """Exact ``(u*, p*, B*)`` for a forcing family.

    ``family`` selects which fields are active: ``coupled`` (all three),
    ``stokes`` (no magnetic field), ``maxwell`` (no velocity) or ``zero``.
    """

    amplitude: float = 1e-2
    modes: tuple = (1, 1, 1)
    coeffs: tuple = (1.0, -1.0, 0.0)
    potential: tuple = (1.0, 1.0, 1.0)
    family: str = "coupled"
    mu: float = 1.0
    u: VectorExpr = field(init=False, repr=False, compare=False)
    p: TrigExpr = field(init=False, repr=False, compare=False)
    B: VectorExpr = field(init=False, repr=False, compare=False)
    psi: VectorExpr = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        a = float(self.amplitude) if self.family != "zero" else 0.0
        with_u = self.family in ("coupled", "stokes")
        with_B = self.family in ("coupled", "maxwell")
        B = eigenmode_B(a if with_B else 0.0, self.coeffs, self.modes)
        psi = stream_function(a if with_u else 0.0, self.potential)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "psi", psi)
        object.__setattr__(self, "u", psi.curl())
        object.__setattr__(self, "p", pressure(a))

    @classmethod
    def from_spec(cls, spec: ForcingSpec, mu: float = 1.0) -> "ManufacturedSolution":
        return cls(spec.amplitude, tuple(spec.modes), tuple(spec.coeffs), tuple(spec.potential), spec.family, mu)

    # -- analytic right-hand sides ----------------------------------------

    def momentum_source(self, X, Y, Z) -> np.ndarray:
        """``-Lap u + (u . grad) u + grad p - curl B x B`` at points."""
        u = self.u(X, Y, Z)
        jac = self.u.jacobian()
        adv = np.stack([sum(u[j] * jac[i][j](X, Y, Z) for j in range(3)) for i in range(3)])
        lorentz = _cross(self.B.curl()(X, Y, Z), self.B(X, Y, Z))
        return -self.u.laplacian()(X, Y, Z) + adv + self.p.grad()(X, Y, Z) - lorentz

    def induction_source(self, X, Y, Z) -> np.ndarray:
        """``curl B + mu curl B x B - u x B`` at points."""
        J = self.B.curl()(X, Y, Z)
        B = self.B(X, Y, Z)
        return J + self.mu * _cross(J, B) - _cross(self.u(X, Y, Z), B)

    # -- sampling on a grid ---------------------------------------------------

    def sample_u(self, grid: Grid) -> FaceField:
        vals = [self.u.comps[a](*grid.coords(loc))[grid.interior_slice(loc)] for a, loc in enumerate(FACE_LOCS)]
        return FaceField.from_interior(grid, np.concatenate([v.ravel(order="F") for v in vals]))

    def sample_B(self, grid: Grid) -> EdgeField:
        vals = [self.B.comps[a](*grid.coords(loc))[grid.interior_slice(loc)] for a, loc in enumerate(EDGE_LOCS)]
        return EdgeField.from_interior(grid, np.concatenate([v.ravel(order="F") for v in vals]))

    def sample_p(self, grid: Grid) -> ScalarField:
        vals = self.p(*grid.coords(CENTER))
        return ScalarField.from_components(grid, [vals - vals.mean()])

    def sample_psi(self, grid: Grid) -> EdgeField:
        vals = [self.psi.comps[a](*grid.coords(loc))[grid.interior_slice(loc)] for a, loc in enumerate(EDGE_LOCS)]
        return EdgeField.from_interior(grid, np.concatenate([v.ravel(order="F") for v in vals]))

    def discrete_state(self, grid: Grid) -> HallState:
        """Exactly admissible discrete fields closest to the exact solution.

        ``u_h`` is the discrete curl of the sampled stream function (so it is
        exactly divergence-free) and ``B_h`` the divergence-free projection of
        the sampled magnetic field.
        """
        u = FaceField.from_interior(grid, (grid.curl_e2f @ self.sample_psi(grid).data)[grid.face_interior])
        B = project_div_free(self.sample_B(grid))
        return HallState(u, self.sample_p(grid), B)


def _face_samples(grid: Grid, fn) -> FaceField:
    parts = []
    for a, loc in enumerate(FACE_LOCS):
        parts.append(fn(*grid.coords(loc))[a].ravel(order="F"))
    return FaceField(grid, np.concatenate(parts))


def forcing_from_solution(sol: ManufacturedSolution, grid: Grid, mode: str = "analytic"):
    """Return ``(f, g)`` face fields that make ``sol`` a solution.

    ``analytic`` samples the closed-form sources; ``discrete`` applies the
    solver's own operators to :meth:`ManufacturedSolution.discrete_state`,
    so that state solves the discrete system up to round-off.
    """
    if mode == "analytic":
        f = _face_samples(grid, sol.momentum_source).with_zero_boundary()
        g = _face_samples(grid, sol.induction_source)
        return f, g
    if mode != "discrete":
        raise ValueError(f"unknown forcing mode {mode!r}")
    st = sol.discrete_state(grid)
    o = ops(grid)
    u_int = st.u.interior()
    f_int = face_laplacian_apply(grid, u_int) + o.grad_i @ st.p.data - lorentz_force(st.B, st.B).interior()
    if np.any(u_int):
        f_int = f_int + convection_matrix(st.u) @ u_int
    J = FaceField.from_interior(grid, (grid.curl_e2f @ st.B.data)[o.fi])
    g_int = hall_forward(st.B, J, sol.mu) - emf(st.u, st.B).interior()
    return FaceField.from_interior(grid, f_int, no_slip=False), FaceField.from_interior(grid, g_int, no_slip=False)


# ---------------------------------------------------------------------------
# convergence study
# ---------------------------------------------------------------------------


@dataclass
class StudyRow:
    n: int
    h: float
    err_u_L2: float
    err_B_L2: float
    converged: bool
    iterations: int
    order_u: float = float("nan")
    order_B: float = float("nan")


@dataclass
class ConvergenceTable:
    rows: list
    order_u: float
    order_B: float
    mode: str
    complete: bool = True

    def write_csv(self, path) -> None:
        with open(Path(path), "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["n", "h", "err_u_L2", "err_B_L2", "order_u", "order_B"])
            for r in self.rows:
                writer.writerow([r.n, f"{r.h:.17g}", f"{r.err_u_L2:.17g}", f"{r.err_B_L2:.17g}",
                                 f"{r.order_u:.17g}", f"{r.order_B:.17g}"])


class StudyAborted(RuntimeError):
    def __init__(self, message: str, table: ConvergenceTable):
        super().__init__(message)
        self.table = table


def fitted_order(hs, errs) -> float:
    """Least-squares slope of ``log err`` against ``log h``."""
    hs = np.asarray(hs, dtype=float)
    errs = np.asarray(errs, dtype=float)
    if len(hs) < 2 or np.any(errs <= 0.0):
        return float("nan")
    return float(np.polyfit(np.log(hs), np.log(errs), 1)[0])


def convergence_study(levels, config: SolverConfig, mode: str | None = None,
                      on_level=None) -> ConvergenceTable:
    """Solve the nonlinear problem at each level and fit error orders.

    ``mode`` overrides the forcing mode of ``config``.  Errors are measured
    against the sampled exact fields (analytic mode) or against the discrete
    state the forcing was built from (discrete mode).
    """
    from hall_steady.driver import solve_hall_mhd

    levels = [int(n) for n in levels]
    if len(levels) < 3:
        raise ValueError("a convergence study needs at least 3 levels")
    if any(b % a for a, b in zip(levels, levels[1:])) or levels != sorted(set(levels)):
        raise ValueError("levels must increase and each must divide the next")
    mode = mode or config.forcing.mode
    sol = ManufacturedSolution.from_spec(config.forcing, config.mu)
    rows = []
    for n in levels:
        grid = Grid(n)
        cfg = config.with_(n=n)
        f, g = forcing_from_solution(sol, grid, mode)
        state, report = solve_hall_mhd(f, g, cfg)
        if mode == "analytic":
            ref = HallState(sol.sample_u(grid), sol.sample_p(grid), sol.sample_B(grid))
        else:
            ref = sol.discrete_state(grid)
        row = StudyRow(n, grid.h, norm(state.u - ref.u, "L2"), norm(state.B - ref.B, "L2"),
                       report.converged, report.iterations)
        if rows:
            prev = rows[-1]
            row.order_u = _pair_order(prev.h, row.h, prev.err_u_L2, row.err_u_L2)
            row.order_B = _pair_order(prev.h, row.h, prev.err_B_L2, row.err_B_L2)
        rows.append(row)
        logger.info("level n=%d: err_u=%.3e err_B=%.3e (%d outer iterations)", n, row.err_u_L2,
                    row.err_B_L2, report.iterations)
        if on_level is not None:
            on_level(row, state, report, f, g)
        if not report.converged:
            table = ConvergenceTable(rows, float("nan"), float("nan"), mode, complete=False)
            raise StudyAborted(f"level n={n} did not converge", table)
    hs = [r.h for r in rows]
    table = ConvergenceTable(
        rows,
        fitted_order(hs, [r.err_u_L2 for r in rows]),
        fitted_order(hs, [r.err_B_L2 for r in rows]),
        mode,
    )
    return table


def _pair_order(h0, h1, e0, e1) -> float:
    if e0 <= 0.0 or e1 <= 0.0:
        return float("nan")
    return math.log(e0 / e1) / math.log(h0 / h1)
