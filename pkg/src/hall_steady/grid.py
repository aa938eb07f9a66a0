"""Staggered (MAC/Yee) grid on the unit cube and its sparse stencils.

Storage layout::

    cell centers  (n,   n,   n  )   p, phi
    x-faces       (n+1, n,   n  )   u_x, (curl B)_x, f_x, g_x
    y-faces       (n,   n+1, n  )
    z-faces       (n,   n,   n+1)
    x-edges       (n,   n+1, n+1)   B_x
    y-edges       (n+1, n,   n+1)
    z-edges       (n+1, n+1, n  )
    nodes         (n+1, n+1, n+1)

Arrays are indexed ``[i, j, k]`` with ``i`` along x.  Flat vectors use
x-fastest ordering (``order="F"``), and the 3D sparse operators are built as
``kron(Az, kron(Ay, Ax))`` to match.  Every location is described per axis by
``"c"`` (cell-centred along that axis) or ``"n"`` (node-centred).
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp

CENTER = ("c", "c", "c")
NODE = ("n", "n", "n")
FACE_LOCS = (("n", "c", "c"), ("c", "n", "c"), ("c", "c", "n"))
EDGE_LOCS = (("c", "n", "n"), ("n", "c", "n"), ("n", "n", "c"))


class GridMismatchError(ValueError):
    """Raised when fields living on different grids are combined."""


# ---------------------------------------------------------------------------
# 1D building blocks
# ---------------------------------------------------------------------------


def diff_n2c(n: int, h: float) -> sp.csr_matrix:
    """Forward difference from n+1 nodes to n cells."""
    return sp.diags([-np.ones(n), np.ones(n)], [0, 1], shape=(n, n + 1), format="csr") / h


def avg_n2c(n: int) -> sp.csr_matrix:
    return sp.diags([0.5 * np.ones(n), 0.5 * np.ones(n)], [0, 1], shape=(n, n + 1), format="csr")


def diff_c2n(n: int, h: float, bc: str) -> sp.csr_matrix:
    """Difference from n cells to n+1 nodes.

    ``bc="neumann"`` leaves the two boundary rows empty.  ``bc="dirichlet"``
    differences against a zero wall value half a cell away, ``2 u_0 / h``.
    """
    m = sp.diags([-np.ones(n), np.ones(n)], [-1, 0], shape=(n + 1, n), format="lil")
    if bc == "neumann":
        m[0, 0] = 0.0
        m[n, n - 1] = 0.0
    elif bc == "dirichlet":
        m[0, 0] = 2.0
        m[n, n - 1] = -2.0
    else:
        raise ValueError(f"unknown boundary condition {bc!r}")
    return m.tocsr() / h


def avg_c2n(n: int, boundary: str = "copy") -> sp.csr_matrix:
    """Average from n cells to n+1 nodes; boundary rows copy, vanish or halve."""
    m = sp.diags([0.5 * np.ones(n), 0.5 * np.ones(n)], [-1, 0], shape=(n + 1, n), format="lil")
    fill = {"copy": 1.0, "zero": 0.0, "half": 0.5}[boundary]
    m[0, 0] = fill
    m[n, n - 1] = fill
    return m.tocsr()


def weights_1d(kind: str, n: int, h: float) -> np.ndarray:
    """Dual-cell lengths: h for cells, h with half ends for nodes."""
    if kind == "c":
        return np.full(n, h)
    w = np.full(n + 1, h)
    w[0] = w[-1] = 0.5 * h
    return w


def kron3(ax, ay, az) -> sp.csr_matrix:
    return sp.kron(az, sp.kron(ay, ax, format="csr"), format="csr")


# ---------------------------------------------------------------------------
# Grid
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Grid:
    """Uniform staggered grid with ``n`` cells per axis on [0, 1]^3."""

    n: int

    def __post_init__(self):
        if not isinstance(self.n, (int, np.integer)) or isinstance(self.n, bool):
            raise TypeError("n must be an integer")
        if self.n < 4:
            raise ValueError(f"n must be >= 4, got {self.n}")

    @property
    def h(self) -> float:
        return 1.0 / self.n

    # -- shapes and coordinates ------------------------------------------

    def shape(self, loc) -> tuple[int, int, int]:
        return tuple(self.n + 1 if s == "n" else self.n for s in loc)

    def size(self, loc) -> int:
        return int(np.prod(self.shape(loc)))

    def axis_coords(self, kind: str) -> np.ndarray:
        if kind == "n":
            return np.arange(self.n + 1) * self.h
        return (np.arange(self.n) + 0.5) * self.h

    def coords(self, loc) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Broadcastable coordinate arrays ``(X, Y, Z)`` for a location."""
        return tuple(np.meshgrid(*(self.axis_coords(s) for s in loc), indexing="ij"))

    def weights(self, loc) -> np.ndarray:
        """Quadrature weights (dual-cell volumes) as a 3D array."""
        wx, wy, wz = (weights_1d(s, self.n, self.h) for s in loc)
        return wx[:, None, None] * wy[None, :, None] * wz[None, None, :]

    def boundary_mask(self, loc) -> np.ndarray:
        """True where a point lies on the cube surface (node index 0 or n)."""
        mask = np.zeros(self.shape(loc), dtype=bool)
        for axis, s in enumerate(loc):
            if s == "n":
                idx = [slice(None)] * 3
                idx[axis] = 0
                mask[tuple(idx)] = True
                idx[axis] = self.n
                mask[tuple(idx)] = True
        return mask

    def interior_slice(self, loc) -> tuple[slice, slice, slice]:
        return tuple(slice(1, -1) if s == "n" else slice(None) for s in loc)

    def interior_shape(self, loc) -> tuple[int, int, int]:
        return tuple(self.n - 1 if s == "n" else self.n for s in loc)

    # -- sizes of the composite spaces -------------------------------------

    @cached_property
    def n_cells(self) -> int:
        return self.n**3

    @cached_property
    def face_sizes(self) -> tuple[int, int, int]:
        return tuple(self.size(loc) for loc in FACE_LOCS)

    @cached_property
    def edge_sizes(self) -> tuple[int, int, int]:
        return tuple(self.size(loc) for loc in EDGE_LOCS)

    @cached_property
    def n_faces(self) -> int:
        return sum(self.face_sizes)

    @cached_property
    def n_edges(self) -> int:
        return sum(self.edge_sizes)

    @cached_property
    def n_nodes(self) -> int:
        return self.size(NODE)

    # -- index maps between full vectors and interior unknowns -------------

    def _interior_index(self, locs) -> np.ndarray:
        parts, offset = [], 0
        for loc in locs:
            mask = ~self.boundary_mask(loc)
            parts.append(np.flatnonzero(mask.ravel(order="F")) + offset)
            offset += self.size(loc)
        return np.concatenate(parts)

    @cached_property
    def face_interior(self) -> np.ndarray:
        """Flat indices of faces whose normal is not a boundary normal."""
        return self._interior_index(FACE_LOCS)

    @cached_property
    def edge_interior(self) -> np.ndarray:
        """Flat indices of edges not lying in the cube surface."""
        return self._interior_index(EDGE_LOCS)

    @cached_property
    def node_interior(self) -> np.ndarray:
        return self._interior_index((NODE,))

    @cached_property
    def face_weights(self) -> np.ndarray:
        return np.concatenate([self.weights(loc).ravel(order="F") for loc in FACE_LOCS])

    @cached_property
    def edge_weights(self) -> np.ndarray:
        return np.concatenate([self.weights(loc).ravel(order="F") for loc in EDGE_LOCS])

    @property
    def cell_weight(self) -> float:
        return self.h**3

    # -- sparse operators --------------------------------------------------

    def _axis_op(self, loc, axis_ops: dict) -> sp.csr_matrix:
        mats = []
        for axis, s in enumerate(loc):
            if axis in axis_ops:
                mats.append(axis_ops[axis])
            else:
                mats.append(sp.identity(self.n + 1 if s == "n" else self.n, format="csr"))
        return kron3(*mats)

    @cached_property
    def div(self) -> sp.csr_matrix:
        """Faces -> cells, conservative face-difference divergence."""
        d = diff_n2c(self.n, self.h)
        return sp.hstack(
            [self._axis_op(CENTER, {a: d}) for a in range(3)], format="csr"
        )

    @cached_property
    def grad(self) -> sp.csr_matrix:
        """Cells -> faces; interior differences, zero on boundary faces."""
        d = diff_c2n(self.n, self.h, "neumann")
        return sp.vstack(
            [self._axis_op(CENTER, {a: d}) for a in range(3)], format="csr"
        )

    @cached_property
    def curl_e2f(self) -> sp.csr_matrix:
        """Edges -> faces; circulation per unit face area."""
        d = diff_n2c(self.n, self.h)
        blocks = [[None] * 3 for _ in range(3)]
        for a in range(3):
            b, c = (a + 1) % 3, (a + 2) % 3
            # (curl E)_a = d_b E_c - d_c E_b
            blocks[a][c] = self._axis_op(EDGE_LOCS[c], {b: d})
            blocks[a][b] = -self._axis_op(EDGE_LOCS[b], {c: d})
        return sp.bmat(blocks, format="csr")

    @cached_property
    def curl_f2e(self) -> sp.csr_matrix:
        """Faces -> edges, the transpose of ``curl_e2f`` with surface rows removed."""
        keep = np.zeros(self.n_edges)
        keep[self.edge_interior] = 1.0
        return (sp.diags(keep) @ self.curl_e2f.T).tocsr()

    @cached_property
    def grad_n2e(self) -> sp.csr_matrix:
        """Nodes -> edges."""
        d = diff_n2c(self.n, self.h)
        return sp.vstack([self._axis_op(NODE, {a: d}) for a in range(3)], format="csr")

    @cached_property
    def face_to_center(self) -> sp.csr_matrix:
        """Faces -> 3 stacked centre components (two-point averages)."""
        a = avg_n2c(self.n)
        return sp.block_diag(
            [self._axis_op(FACE_LOCS[c], {c: a}) for c in range(3)], format="csr"
        )

    @cached_property
    def center_to_face(self) -> sp.csr_matrix:
        """3 stacked centre components -> faces; boundary faces copy their cell.

        This is the adjoint of ``face_to_center`` in the dual-volume weighted
        inner products, which is what makes the cross-product cancellations
        exact.
        """
        a = avg_c2n(self.n, "copy")
        return sp.block_diag(
            [self._axis_op(CENTER, {c: a}) for c in range(3)], format="csr"
        )

    @cached_property
    def edge_to_center(self) -> sp.csr_matrix:
        """Edges -> 3 stacked centre components (four-point averages)."""
        a = avg_n2c(self.n)
        blocks = []
        for c in range(3):
            others = [ax for ax in range(3) if ax != c]
            blocks.append(self._axis_op(EDGE_LOCS[c], {others[0]: a, others[1]: a}))
        return sp.block_diag(blocks, format="csr")

    @cached_property
    def center_to_edge(self) -> sp.csr_matrix:
        a = avg_c2n(self.n, "copy")
        blocks = []
        for c in range(3):
            others = [ax for ax in range(3) if ax != c]
            blocks.append(self._axis_op(CENTER, {others[0]: a, others[1]: a}))
        return sp.block_diag(blocks, format="csr")

    @cached_property
    def center_to_center(self) -> sp.csr_matrix:
        return sp.identity(3 * self.n_cells, format="csr")

    def difference(self, loc, axis: int, bc: str = "neumann") -> sp.csr_matrix:
        """First difference of a single-location array along ``axis``.

        Node axes difference into cells using the stored (boundary-inclusive)
        values; cell axes difference into nodes with the given wall treatment.
        """
        key = (tuple(loc), axis, bc)
        cache = self.__dict__.setdefault("_diff_cache", {})
        if key not in cache:
            if loc[axis] == "n":
                d = diff_n2c(self.n, self.h)
            else:
                d = diff_c2n(self.n, self.h, bc)
            cache[key] = self._axis_op(loc, {axis: d})
        return cache[key]

    def difference_weights(self, loc, axis: int) -> np.ndarray:
        """Quadrature weights of the values produced by ``difference``."""
        target = list(loc)
        target[axis] = "c" if loc[axis] == "n" else "n"
        return self.weights(tuple(target)).ravel(order="F")
