"""Fast diagonalisation of separable 3-point Laplacians on the unit cube.

Each axis carries one of three 1D operators, all ``(-u[i-1] + 2u[i] - u[i+1])/h^2``
in the interior:

``"nd"``  node-centred, Dirichlet: n-1 interior nodes, walls are zero (DST-I)
``"cd"``  cell-centred, Dirichlet by odd reflection across the wall (DST-II)
``"cn"``  cell-centred, Neumann by even reflection (DCT-II)

The 3D operator is the Kronecker sum, so its eigenvalues are sums of the 1D
ones and one forward/inverse transform pair solves it exactly.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp
from scipy import fft

AXIS_KINDS = ("nd", "cd", "cn")


def eigenvalues_1d(kind: str, n: int, h: float) -> np.ndarray:
    if kind == "nd":
        k = np.arange(1, n)
    elif kind == "cd":
        k = np.arange(1, n + 1)
    elif kind == "cn":
        k = np.arange(0, n)
    else:
        raise ValueError(f"unknown axis kind {kind!r}")
    return 4.0 * np.sin(0.5 * np.pi * k / n) ** 2 / h**2


def laplacian_1d(kind: str, n: int, h: float) -> sp.csr_matrix:
    m = n - 1 if kind == "nd" else n
    main = 2.0 * np.ones(m)
    if kind == "cd":
        main[0] = main[-1] = 3.0
    elif kind == "cn":
        main[0] = main[-1] = 1.0
    off = -np.ones(m - 1)
    return sp.diags([off, main, off], [-1, 0, 1], format="csr") / h**2


def _forward(x, kind, axis):
    if kind == "nd":
        return fft.dst(x, type=1, axis=axis, norm="ortho")
    if kind == "cd":
        return fft.dst(x, type=2, axis=axis, norm="ortho")
    return fft.dct(x, type=2, axis=axis, norm="ortho")


def _inverse(x, kind, axis):
    if kind == "nd":
        return fft.idst(x, type=1, axis=axis, norm="ortho")
    if kind == "cd":
        return fft.idst(x, type=2, axis=axis, norm="ortho")
    return fft.idct(x, type=2, axis=axis, norm="ortho")


class SeparableLaplacian:
    """Minus-Laplacian with per-axis boundary kinds on an ``n^3`` grid.

    Arrays passed to :meth:`solve` and :meth:`apply` have the interior shape
    implied by the kinds (``n-1`` along ``"nd"`` axes, ``n`` otherwise).
    """

    def __init__(self, kinds, n: int, h: float):
        if len(kinds) != 3 or any(k not in AXIS_KINDS for k in kinds):
            raise ValueError(f"bad axis kinds {kinds!r}")
        self.kinds = tuple(kinds)
        self.n = n
        self.h = h
        lx, ly, lz = (eigenvalues_1d(k, n, h) for k in self.kinds)
        lam = lx[:, None, None] + ly[None, :, None] + lz[None, None, :]
        self.singular = all(k == "cn" for k in self.kinds)
        if self.singular:
            lam[0, 0, 0] = np.inf  # drop the constant mode
        self._inv_lam = 1.0 / lam
        self.shape = lam.shape
        self.min_eigenvalue = float(np.min(lam[np.isfinite(lam)]))

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        """Exact solve; in the all-Neumann case the result has zero mean."""
        x = np.asarray(rhs, dtype=float).reshape(self.shape)
        for axis, kind in enumerate(self.kinds):
            x = _forward(x, kind, axis)
        x = x * self._inv_lam
        for axis, kind in enumerate(self.kinds):
            x = _inverse(x, kind, axis)
        return x

    def apply(self, u: np.ndarray) -> np.ndarray:
        u = np.asarray(u, dtype=float).reshape(self.shape)
        out = np.zeros_like(u)
        for axis, kind in enumerate(self.kinds):
            out += _apply_1d(u, kind, axis, self.h)
        return out

    def matrix(self) -> sp.csr_matrix:
        """Assembled sparse operator in x-fastest ordering (for checks)."""
        mats = [laplacian_1d(k, self.n, self.h) for k in self.kinds]
        eyes = [sp.identity(m.shape[0], format="csr") for m in mats]
        from hall_steady.grid import kron3

        return (
            kron3(mats[0], eyes[1], eyes[2])
            + kron3(eyes[0], mats[1], eyes[2])
            + kron3(eyes[0], eyes[1], mats[2])
        ).tocsr()


def _apply_1d(u, kind, axis, h):
    u = np.moveaxis(u, axis, 0)
    out = 2.0 * u
    out[1:] -= u[:-1]
    out[:-1] -= u[1:]
    if kind == "cd":
        out[0] += u[0]
        out[-1] += u[-1]
    elif kind == "cn":
        out[0] -= u[0]
        out[-1] -= u[-1]
    return np.moveaxis(out / h**2, 0, axis)
