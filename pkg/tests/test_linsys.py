from __future__ import annotations

import numpy as np
import pytest

from hall_steady.config import SolverConfig
from hall_steady.driver import random_admissible
from hall_steady.fields import EdgeField, FaceField
from hall_steady.grid import FACE_LOCS, Grid
from hall_steady.krylov import ConvergenceError, KrylovSpec, SolverError
from hall_steady.linsys import (
    HallState,
    LinearizedProblem,
    convection_matrix,
    emf,
    h1_edge,
    h1_face,
    lorentz_force,
    momentum_residual,
    solve_coupled,
    solve_maxwell_type,
    solve_momentum,
)
from hall_steady.mms import ManufacturedSolution, forcing_from_solution
from hall_steady.operators import curl_e2f, div, inner, norm

SPEC = KrylovSpec("cg", 1e-12, 500)
XSPEC = KrylovSpec("bicgstab", 1e-12, 1000)


def face_samples(grid, vec):
    return FaceField.from_components(grid, [vec.comps[a](*grid.coords(loc)) for a, loc in enumerate(FACE_LOCS)])


@pytest.fixture(scope="module")
def pair16():
    g = Grid(16)
    rng = np.random.default_rng(99)
    return random_admissible(g, rng, 1.0), random_admissible(g, rng, 2.0)


# -- containers and norms -----------------------------------------------------------


def test_zero_state(grid8):
    st = HallState.zeros(grid8)
    assert st.norm_H1() == 0.0
    assert st.u.no_slip and st.B.tangential_zero


def test_h1_helpers_match_field_norms(pair16):
    a, _ = pair16
    assert h1_face(a.u) == pytest.approx(norm(a.u, "H1"), rel=1e-12)
    assert h1_edge(a.B) == pytest.approx(norm(a.B, "H1"), rel=1e-12)


def test_problem_invariants(grid8, rng):
    z = FaceField.zeros(grid8, no_slip=True)
    H = EdgeField.zeros(grid8, tangential_zero=True)
    cfg = SolverConfig(n=8)
    w_bad = FaceField.from_interior(grid8, rng.standard_normal(grid8.face_interior.size))
    with pytest.raises(ValueError, match="divergence"):
        LinearizedProblem(w_bad, H, z, z, cfg)
    with pytest.raises(ValueError, match="tangential"):
        LinearizedProblem(z, EdgeField(grid8, np.ones(grid8.n_edges)), z, z, cfg)
    with pytest.raises(ValueError, match="no-slip"):
        LinearizedProblem(FaceField.zeros(grid8), H, z, z, cfg)


# -- exact discrete identities -----------------------------------------------------------


def test_cross_cancellation(pair16):
    a, b = pair16
    u, B, H = a.u, a.B, b.B
    t1 = inner(lorentz_force(B, H), u)
    t2 = inner(emf(u, H), curl_e2f(B))
    assert abs(t1 + t2) <= 1e-13 * (abs(t1) + abs(t2))


def test_skew_transport(pair16):
    a, b = pair16
    C = convection_matrix(a.u)
    v = b.u.interior()
    assert abs(v @ (C @ v)) <= 1e-13 * np.linalg.norm(C @ v) * np.linalg.norm(v)
    assert abs(C - C.T).max() == pytest.approx(2 * abs(C).max(), rel=1e-12)


def test_convection_consistent_with_advective_form():
    sol = ManufacturedSolution(amplitude=1.0, family="stokes")
    jac = sol.u.jacobian()
    errors = []
    for n in (16, 32):
        g = Grid(n)
        u = sol.discrete_state(g).u
        Cu = FaceField.from_interior(g, convection_matrix(u) @ u.interior())
        exact = FaceField.from_components(g, [
            sum(sol.u.comps[j](*g.coords(loc)) * jac[a][j](*g.coords(loc)) for j in range(3))
            for a, loc in enumerate(FACE_LOCS)
        ]).with_zero_boundary()
        errors.append(norm(Cu - exact, "L2"))
    assert np.log2(errors[0] / errors[1]) >= 1.9


# -- Maxwell-type subproblem ------------------------------------------------------------


def test_maxwell_zero_source(pair16):
    a, _ = pair16
    B, phi = solve_maxwell_type(a.B, FaceField.zeros(a.grid), XSPEC)
    assert not np.any(B.data) and not np.any(phi.data)


def test_maxwell_eigenmode_converges():
    sol = ManufacturedSolution(amplitude=1.0, family="maxwell")
    errors = []
    for n in (16, 32):
        g = Grid(n)
        G = face_samples(g, sol.B.curl())
        B, _ = solve_maxwell_type(EdgeField.zeros(g, tangential_zero=True), G, XSPEC)
        errors.append(norm(B - sol.sample_B(g), "L2"))
    assert np.log2(errors[0] / errors[1]) >= 1.9


def test_maxwell_energy_inequality(grid16, rng):
    H = 0.5 * ManufacturedSolution(amplitude=1.0, family="maxwell").sample_B(grid16)
    for _ in range(3):
        G = FaceField(grid16, rng.standard_normal(grid16.n_faces))
        B, _ = solve_maxwell_type(H, G, XSPEC)
        assert norm(curl_e2f(B), "L2") <= (1 + 1e-6) * norm(G, "L2")


# -- momentum --------------------------------------------------------------------------


def test_momentum_zero_data(grid8):
    z = FaceField.zeros(grid8, no_slip=True)
    zB = EdgeField.zeros(grid8, tangential_zero=True)
    u, p = solve_momentum(z, zB, zB, z, SPEC)
    assert not np.any(u.data) and not np.any(p.data)


def test_stokes_manufactured_converges():
    sol = ManufacturedSolution(amplitude=1.0, family="stokes")
    rhs = sol.p.grad()
    lap = sol.u.laplacian()
    errors = []
    for n in (16, 32):
        g = Grid(n)
        f = FaceField.from_components(g, [
            -lap.comps[a](*g.coords(loc)) + rhs.comps[a](*g.coords(loc)) for a, loc in enumerate(FACE_LOCS)
        ]).with_zero_boundary()
        z = FaceField.zeros(g, no_slip=True)
        zB = EdgeField.zeros(g, tangential_zero=True)
        u, p = solve_momentum(z, zB, zB, f, SPEC)
        assert abs(p.mean()) < 1e-12
        errors.append((norm(u - sol.sample_u(g), "L2"), norm(p - sol.sample_p(g), "L2")))
    assert np.log2(errors[0][0] / errors[1][0]) >= 1.9
    assert np.log2(errors[0][1] / errors[1][1]) >= 1.9


def test_momentum_energy_identity_and_divergence(pair16, rng):
    a, b = pair16
    g = a.grid
    f = FaceField.from_interior(g, rng.standard_normal(g.face_interior.size))
    rtol = 1e-12
    u, p = solve_momentum(0.1 * a.u, b.B, a.B, f, KrylovSpec("cg", rtol, 500))
    semi = norm(u, "H1semi") ** 2
    rhs = inner(f, u) + inner(lorentz_force(a.B, b.B), u)
    assert semi == pytest.approx(rhs, rel=1e-9)
    assert norm(div(u), "L2") <= 10 * rtol * norm(u, "H1")
    r = momentum_residual(u, p, 0.1 * a.u, b.B, a.B, f)
    assert np.linalg.norm(r) <= 1e-8 * np.linalg.norm(f.interior())


# -- coupled linear solve ------------------------------------------------------------------


def test_coupled_zero_data(pair16):
    a, b = pair16
    z = FaceField.zeros(a.grid, no_slip=True)
    st = solve_coupled(LinearizedProblem(a.u, b.B, z, z, SolverConfig(n=16)))
    assert st.norm_H1() == 0.0


def test_coupled_decouples_at_zero_frozen_fields(grid16):
    sol = ManufacturedSolution(amplitude=0.3)
    f, g = forcing_from_solution(sol, grid16, "analytic")
    zw = FaceField.zeros(grid16, no_slip=True)
    zH = EdgeField.zeros(grid16, tangential_zero=True)
    cfg = SolverConfig(n=16, inner_rtol=1e-12)
    st = solve_coupled(LinearizedProblem(zw, zH, f, g, cfg))
    u, _ = solve_momentum(zw, zH, zH, f, SPEC)
    B, _ = solve_maxwell_type(zH, g, XSPEC)
    assert norm(st.u - u, "H1") <= 1e-12 * norm(u, "H1")
    assert norm(st.B - B, "H1") <= 1e-12 * norm(B, "H1")


def test_coupled_linearized_manufactured_converges():
    sol = ManufacturedSolution(amplitude=0.5)
    errors = []
    for n in (16, 32):
        g = Grid(n)
        frozen = sol.discrete_state(g)
        f, gg = forcing_from_solution(sol, g, "analytic")
        st = solve_coupled(LinearizedProblem(frozen.u, frozen.B, f, gg, SolverConfig(n=n)))
        errors.append((norm(st.u - sol.sample_u(g), "L2"), norm(st.B - sol.sample_B(g), "L2")))
    assert np.log2(errors[0][0] / errors[1][0]) >= 1.9
    assert np.log2(errors[0][1] / errors[1][1]) >= 1.9


def test_coupled_reports_iteration_cap(grid8):
    sol = ManufacturedSolution(amplitude=1.0)
    frozen = sol.discrete_state(grid8)
    f, g = forcing_from_solution(sol, grid8, "analytic")
    cfg = SolverConfig(n=8, max_inner=1)
    with pytest.raises(SolverError):
        solve_coupled(LinearizedProblem(frozen.u, frozen.B, f, g, cfg))
    assert issubclass(ConvergenceError, SolverError)

