"""Operator self-checks run by ``hall-steady check-operators``."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from hall_steady import hallmat
from hall_steady.elliptic import poincare_constant
from hall_steady.fields import EdgeField, FaceField, ScalarField
from hall_steady.grid import Grid
from hall_steady.operators import curl_e2f, curl_f2e, div, grad, inner


@dataclass
class CheckResult:
    name: str
    defect: float
    bound: float

    @property
    def passed(self) -> bool:
        return bool(self.defect <= self.bound)


def _rel(a: float, scale: float) -> float:
    return abs(a) / scale if scale > 0 else abs(a)


def mimetic_checks(grid: Grid, rng: np.random.Generator, samples: int = 10) -> list:
    h2 = grid.h**2
    dc = cg = sbp = adj = 0.0
    for _ in range(samples):
        E = EdgeField.from_interior(grid, rng.standard_normal(grid.edge_interior.size))
        dc = max(dc, float(np.max(np.abs(div(curl_e2f(E)).data))) * h2 / np.max(np.abs(E.data)))
        psi = ScalarField(grid, rng.standard_normal(grid.n_cells))
        cg = max(cg, float(np.max(np.abs(curl_f2e(grad(psi)).data))) * h2 / np.max(np.abs(psi.data)))
        F = FaceField.from_interior(grid, rng.standard_normal(grid.face_interior.size))
        lhs, rhs = inner(div(F), psi), inner(F, grad(psi))
        sbp = max(sbp, _rel(lhs + rhs, abs(lhs) + abs(rhs)))
        a, b = inner(curl_e2f(E), F), inner(E, curl_f2e(F))
        adj = max(adj, _rel(a - b, abs(a) + abs(b)))
    return [
        CheckResult("div_curl_zero", dc, 1e-13),
        CheckResult("curl_grad_zero", cg, 1e-13),
        CheckResult("summation_by_parts", sbp, 1e-13),
        CheckResult("curl_adjointness", adj, 1e-13),
    ]


def hall_matrix_checks(rng: np.random.Generator, samples: int = 10_000) -> list:
    b = rng.standard_normal((samples, 3))
    b *= (10.0 * rng.random(samples) ** (1 / 3) / np.linalg.norm(b, axis=1))[:, None]
    xi = rng.standard_normal((samples, 3))
    nxi = np.sum(xi * xi, axis=1)
    y = hallmat.apply_A(b, hallmat.apply_A_inv(b, xi))
    z = hallmat.apply_A_inv(b, hallmat.apply_A(b, xi))
    roundtrip = max(np.max(np.linalg.norm(y - xi, axis=1) / np.sqrt(nxi)),
                    np.max(np.linalg.norm(z - xi, axis=1) / np.sqrt(nxi)))
    quad = np.max(np.abs(np.sum(hallmat.apply_A(b, xi) * xi, axis=1) - nxi) / nxi)
    exact = hallmat.quadratic_form_inv(b, xi)
    inv = np.max(np.abs(np.sum(hallmat.apply_A_inv(b, xi) * xi, axis=1) - exact) / exact)
    entries = float(np.max(np.abs(hallmat.A_inv_matrix(b))))
    return [
        CheckResult("hall_inverse_roundtrip", float(roundtrip), 1e-14),
        CheckResult("hall_quadratic_form", float(quad), 1e-14),
        CheckResult("hall_inverse_quadratic_form", float(inv), 1e-14),
        CheckResult("hall_inverse_entry_bound", max(entries - 1.0, 0.0), 0.0),
    ]


def run_operator_checks(grid: Grid, seed: int = 0) -> tuple[list, float]:
    """All identity checks plus the estimated discrete Poincare constant."""
    rng = np.random.default_rng(seed)
    results = mimetic_checks(grid, rng) + hall_matrix_checks(rng)
    return results, poincare_constant(grid.n).constant
