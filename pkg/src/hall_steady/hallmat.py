"""Pointwise algebra of the Hall matrix ``A(b) xi = xi + xi x b``.

``A(b)`` is ``I - [b]_x`` with ``[b]_x`` the cross-product matrix, so
``det A(b) = 1 + |b|^2`` and the inverse has the closed form::

    A^{-1}(b) = (I + b b^T + [b]_x) / (1 + |b|^2)

Every function broadcasts over leading axes: ``b`` and ``xi`` may be arrays of
shape ``(..., 3)``.
"""

from __future__ import annotations

import numpy as np

from hall_steady.fields import EdgeField, FaceField, check_same_grid


def apply_A(b, xi) -> np.ndarray:
    b = np.asarray(b, dtype=float)
    xi = np.asarray(xi, dtype=float)
    return xi + np.cross(xi, b)


def apply_A_inv(b, xi) -> np.ndarray:
    b = np.asarray(b, dtype=float)
    xi = np.asarray(xi, dtype=float)
    bb = np.sum(b * b, axis=-1, keepdims=True)
    bxi = np.sum(b * xi, axis=-1, keepdims=True)
    return (xi + bxi * b + np.cross(b, xi)) / (1.0 + bb)


def A_matrix(b) -> np.ndarray:
    b = np.asarray(b, dtype=float)
    b1, b2, b3 = b[..., 0], b[..., 1], b[..., 2]
    one = np.ones_like(b1)
    return np.stack(
        [
            np.stack([one, b3, -b2], axis=-1),
            np.stack([-b3, one, b1], axis=-1),
            np.stack([b2, -b1, one], axis=-1),
        ],
        axis=-2,
    )


def A_inv_matrix(b) -> np.ndarray:
    """Assembled closed-form inverse; every entry is bounded by 1 in magnitude."""
    b = np.asarray(b, dtype=float)
    b1, b2, b3 = b[..., 0], b[..., 1], b[..., 2]
    s = 1.0 / (1.0 + b1 * b1 + b2 * b2 + b3 * b3)
    rows = [
        [1 + b1 * b1, b1 * b2 - b3, b1 * b3 + b2],
        [b1 * b2 + b3, 1 + b2 * b2, b2 * b3 - b1],
        [b1 * b3 - b2, b2 * b3 + b1, 1 + b3 * b3],
    ]
    return s[..., None, None] * np.stack([np.stack(r, axis=-1) for r in rows], axis=-2)


def quadratic_form_inv(b, xi) -> np.ndarray:
    """``<A^{-1}(b) xi, xi> = (|xi|^2 + (b . xi)^2) / (1 + |b|^2)``."""
    b = np.asarray(b, dtype=float)
    xi = np.asarray(xi, dtype=float)
    return (np.sum(xi * xi, axis=-1) + np.sum(b * xi, axis=-1) ** 2) / (1.0 + np.sum(b * b, axis=-1))


def collocated(grid, flat_centers: np.ndarray) -> np.ndarray:
    """Reshape 3 stacked centre components into an ``(n^3, 3)`` array."""
    return flat_centers.reshape(3, grid.n_cells).T


def uncollocated(values: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(values.T).ravel()


def apply_A_inv_field(H: EdgeField, F: FaceField, mu: float = 1.0) -> FaceField:
    """Apply ``A^{-1}(mu H)`` to a face field.

    Both ``H`` and ``F`` are collocated at cell centres by the shared averaging
    operators, the closed-form inverse is applied there, and only the
    deviation from the identity is carried back to the faces::

        F + P* [(A^{-1}(mu Hc) - I)(P F)]

    so ``H == 0`` returns ``F`` unchanged and constant fields map exactly.
    """
    grid = check_same_grid(H, F)
    hc = mu * collocated(grid, grid.edge_to_center @ H.data)
    fc = collocated(grid, grid.face_to_center @ F.data)
    delta = apply_A_inv(hc, fc) - fc
    return FaceField(grid, F.data + grid.center_to_face @ uncollocated(delta))


def apply_A_field(H: EdgeField, F: FaceField, mu: float = 1.0) -> FaceField:
    """Collocated forward map ``F + P* [(P F) x (mu Hc)]``."""
    grid = check_same_grid(H, F)
    hc = mu * collocated(grid, grid.edge_to_center @ H.data)
    fc = collocated(grid, grid.face_to_center @ F.data)
    return FaceField(grid, F.data + grid.center_to_face @ uncollocated(np.cross(fc, hc)))
