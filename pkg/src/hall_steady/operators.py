"""Mimetic vector calculus and discrete norms on the staggered grid.

All operators are linear and pure.  Identities that hold exactly (up to
round-off) by construction:

* ``div(curl_e2f(E)) == 0`` in every cell,
* ``curl_f2e(grad(psi)) == 0`` on every edge,
* ``<div F, psi> = -<F, grad psi>`` when F has zero boundary-normal entries,
* ``<curl_e2f E, F> = <E, curl_f2e F>`` when E is tangential-zero.
"""

from __future__ import annotations

import numpy as np

from hall_steady.fields import EdgeField, FaceField, ScalarField, check_same_grid
from hall_steady.grid import CENTER, EDGE_LOCS, FACE_LOCS, NODE, Grid

NORM_KINDS = ("L2", "Lq", "Linf", "H1semi", "H1", "W1q")


def grad(phi: ScalarField) -> FaceField:
    """Centred difference across interior faces; boundary faces are zero."""
    return FaceField(phi.grid, phi.grid.grad @ phi.data)


def div(F: FaceField) -> ScalarField:
    return ScalarField(F.grid, F.grid.div @ F.data)


def curl_e2f(E: EdgeField) -> FaceField:
    out = E.grid.curl_e2f @ E.data
    if E.tangential_zero:
        # circulation around a surface face only sees surface edges
        return FaceField.from_interior(E.grid, out[E.grid.face_interior])
    return FaceField(E.grid, out)


def curl_f2e(F: FaceField) -> EdgeField:
    """Dual curl; the result lives in the tangential-zero test space."""
    return EdgeField(F.grid, F.grid.curl_f2e @ F.data, tangential_zero=True)


def div_edges(E: EdgeField) -> np.ndarray:
    """Divergence of an edge field at interior nodes, ``-grad_n2e^T E``."""
    grid = E.grid
    return -(grid.grad_n2e.T @ E.data)[grid.node_interior]


def inner(a, b) -> float:
    """Quadrature-weighted inner product of two fields of the same kind."""
    check_same_grid(a, b)
    if type(a) is not type(b):
        raise TypeError("inner product needs two fields of the same kind")
    return float(np.dot(_weights(a), a.data * b.data))


def _weights(field) -> np.ndarray:
    grid = field.grid
    if isinstance(field, ScalarField):
        return np.full(grid.n_cells, grid.cell_weight)
    if isinstance(field, FaceField):
        return grid.face_weights
    return grid.edge_weights


# ---------------------------------------------------------------------------
# interpolation
# ---------------------------------------------------------------------------


def interp(field, target: str):
    """Average a field to an adjacent staggered location.

    Supported pairs::

        FaceField  -> "center"   (3, n, n, n) array
        EdgeField  -> "center"   (3, n, n, n) array
        (3, n, n, n) array -> "face"   FaceField (boundary faces copy their cell)
        (3, n, n, n) array -> "edge"   EdgeField (surface edges copy)
        ScalarField -> "face"    FaceField holding the scalar at every face
    """
    if isinstance(field, FaceField) and target == "center":
        return _stack(field.grid, field.grid.face_to_center @ field.data)
    if isinstance(field, EdgeField) and target == "center":
        return _stack(field.grid, field.grid.edge_to_center @ field.data)
    if isinstance(field, ScalarField) and target == "face":
        grid = field.grid
        flat = np.tile(field.data, 3)
        return FaceField(grid, grid.center_to_face @ flat)
    if isinstance(field, np.ndarray) and field.ndim == 4 and field.shape[0] == 3:
        grid = Grid(field.shape[1])
        flat = np.concatenate([c.ravel(order="F") for c in field])
        if target == "face":
            return FaceField(grid, grid.center_to_face @ flat)
        if target == "edge":
            return EdgeField(grid, grid.center_to_edge @ flat)
    raise ValueError(f"unsupported interpolation {type(field).__name__} -> {target!r}")


def _stack(grid: Grid, flat: np.ndarray) -> np.ndarray:
    m = grid.n_cells
    return np.stack([flat[c * m:(c + 1) * m].reshape(grid.shape(CENTER), order="F") for c in range(3)])


# ---------------------------------------------------------------------------
# norms
# ---------------------------------------------------------------------------


def _component_specs(field):
    """(location, wall treatment of cell axes, flat slice) per component."""
    grid = field.grid
    if isinstance(field, ScalarField):
        return [(CENTER, "neumann", slice(0, grid.n_cells))]
    locs = FACE_LOCS if isinstance(field, FaceField) else EDGE_LOCS
    bc = "dirichlet" if isinstance(field, FaceField) and field.no_slip else "neumann"
    specs, offset = [], 0
    for loc in locs:
        size = grid.size(loc)
        specs.append((loc, bc, slice(offset, offset + size)))
        offset += size
    return specs


def _seminorm_power(field, q: float) -> float:
    grid = field.grid
    total = 0.0
    for loc, bc, sl in _component_specs(field):
        v = field.data[sl]
        for axis in range(3):
            d = grid.difference(loc, axis, bc) @ v
            total += float(np.dot(grid.difference_weights(loc, axis), np.abs(d) ** q))
    return total


def norm(field, kind: str = "L2", q: float = 4.0) -> float:
    """Discrete norm with dual-volume quadrature weights.

    Vector fields are measured component-wise, so the L2 norm is exactly the
    one induced by :func:`inner`.  Differences for ``H1semi``/``H1``/``W1q``
    are taken along every axis; a cell-centred axis of a no-slip face field
    differences against the wall value across the half cell.
    """
    if kind not in NORM_KINDS:
        raise ValueError(f"unknown norm kind {kind!r}; expected one of {NORM_KINDS}")
    w = _weights(field)
    if kind == "L2":
        return float(np.sqrt(np.dot(w, field.data**2)))
    if kind == "Linf":
        return float(np.max(np.abs(field.data), initial=0.0))
    if kind == "Lq":
        return float(np.dot(w, np.abs(field.data) ** q) ** (1.0 / q))
    if kind == "H1semi":
        return float(np.sqrt(_seminorm_power(field, 2.0)))
    if kind == "H1":
        return float(np.sqrt(np.dot(w, field.data**2) + _seminorm_power(field, 2.0)))
    return float((np.dot(w, np.abs(field.data) ** q) + _seminorm_power(field, q)) ** (1.0 / q))


def node_values_to_edges(grid: Grid, values: np.ndarray) -> EdgeField:
    """Exact edge differences of nodal samples (discrete gradient of a 0-form)."""
    flat = np.asarray(values).ravel(order="F")
    if flat.size != grid.size(NODE):
        raise ValueError("need (n+1)^3 nodal values")
    return EdgeField(grid, grid.grad_n2e @ flat)
