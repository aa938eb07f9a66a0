"""Immutable discrete fields on a :class:`~hall_steady.grid.Grid`.

A field owns a flat float64 vector in x-fastest order; vector fields store
their three components back to back (x, then y, then z).
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from hall_steady.grid import CENTER, EDGE_LOCS, FACE_LOCS, Grid, GridMismatchError

DUMP_MAGIC = "HALLFIELD v1"


class _Field:
    kind = ""
    locs: tuple = ()

    def __init__(self, grid: Grid, data, **flags):
        data = np.array(data, dtype=np.float64).ravel()
        expected = sum(grid.size(loc) for loc in self.locs)
        if data.size != expected:
            raise ValueError(f"{self.kind} field on n={grid.n} needs {expected} values, got {data.size}")
        if not np.all(np.isfinite(data)):
            raise FloatingPointError(f"non-finite entries in {self.kind} field")
        data.flags.writeable = False
        self.grid = grid
        self.data = data
        self._check_flags(**flags)

    def _check_flags(self):
        pass

    # -- views ------------------------------------------------------------

    @property
    def components(self) -> tuple[np.ndarray, ...]:
        """Read-only 3D views of each component, indexed ``[i, j, k]``."""
        out, offset = [], 0
        for loc in self.locs:
            size = self.grid.size(loc)
            out.append(self.data[offset:offset + size].reshape(self.grid.shape(loc), order="F"))
            offset += size
        return tuple(out)

    @classmethod
    def from_components(cls, grid: Grid, comps, **flags):
        flat = np.concatenate([np.asarray(c, dtype=np.float64).ravel(order="F") for c in comps])
        return cls(grid, flat, **flags)

    @classmethod
    def zeros(cls, grid: Grid, **flags):
        return cls(grid, np.zeros(sum(grid.size(loc) for loc in cls.locs)), **flags)

    # -- arithmetic ---------------------------------------------------------

    def _same_grid(self, other):
        if not isinstance(other, type(self)):
            raise TypeError(f"cannot combine {type(self).__name__} with {type(other).__name__}")
        if other.grid != self.grid:
            raise GridMismatchError(f"grid n={self.grid.n} vs n={other.grid.n}")

    def _combined_flags(self, other=None) -> dict:
        return {}

    def _new(self, data, flags):
        return type(self)(self.grid, data, **flags)

    def __add__(self, other):
        self._same_grid(other)
        return self._new(self.data + other.data, self._combined_flags(other))

    def __sub__(self, other):
        self._same_grid(other)
        return self._new(self.data - other.data, self._combined_flags(other))

    def __mul__(self, scalar):
        return self._new(float(scalar) * self.data, self._combined_flags())

    __rmul__ = __mul__

    def __neg__(self):
        return self._new(-self.data, self._combined_flags())

    def __repr__(self):
        return f"{type(self).__name__}(n={self.grid.n}, max={np.max(np.abs(self.data), initial=0.0):.3e})"

    # -- dumps ----------------------------------------------------------------

    def dump(self, path) -> None:
        """Write the ``HALLFIELD v1`` header line followed by raw float64 LE data."""
        header = f"{DUMP_MAGIC} kind={self.kind} n={self.grid.n} order=x-fastest endian=little fp=64\n"
        with open(path, "wb") as fh:
            fh.write(header.encode("ascii"))
            fh.write(self.data.astype("<f8").tobytes())


class ScalarField(_Field):
    kind = "scalar"
    locs = (CENTER,)

    @property
    def values(self) -> np.ndarray:
        return self.components[0]

    def mean(self) -> float:
        return float(np.mean(self.data))


class FaceField(_Field):
    """Normal components on x-, y- and z-normal faces.

    ``no_slip=True`` asserts that boundary-normal entries are exactly zero and
    selects wall (ghost-reflection) treatment of tangential differences in the
    H1-type norms.
    """

    kind = "face"
    locs = FACE_LOCS

    def _check_flags(self, no_slip: bool = False):
        self.no_slip = bool(no_slip)
        if self.no_slip:
            boundary = np.ones(self.grid.n_faces, dtype=bool)
            boundary[self.grid.face_interior] = False
            if np.any(self.data[boundary] != 0.0):
                raise ValueError("no-slip face field has nonzero boundary-normal entries")

    def _combined_flags(self, other=None):
        return {"no_slip": self.no_slip and (other is None or other.no_slip)}

    def interior(self) -> np.ndarray:
        return self.data[self.grid.face_interior]

    @classmethod
    def from_interior(cls, grid: Grid, values, no_slip: bool = True):
        full = np.zeros(grid.n_faces)
        full[grid.face_interior] = values
        return cls(grid, full, no_slip=no_slip)

    def with_zero_boundary(self) -> "FaceField":
        return FaceField.from_interior(self.grid, self.interior(), no_slip=True)


class EdgeField(_Field):
    """Tangential components on x-, y- and z-directed edges.

    ``tangential_zero=True`` asserts that every edge lying in the cube surface
    carries exactly zero (the discrete ``B x nu = 0``).
    """

    kind = "edge"
    locs = EDGE_LOCS

    def _check_flags(self, tangential_zero: bool = False):
        self.tangential_zero = bool(tangential_zero)
        if self.tangential_zero:
            boundary = np.ones(self.grid.n_edges, dtype=bool)
            boundary[self.grid.edge_interior] = False
            if np.any(self.data[boundary] != 0.0):
                raise ValueError("tangential-zero edge field has nonzero surface entries")

    def _combined_flags(self, other=None):
        return {"tangential_zero": self.tangential_zero and (other is None or other.tangential_zero)}

    def interior(self) -> np.ndarray:
        return self.data[self.grid.edge_interior]

    @classmethod
    def from_interior(cls, grid: Grid, values):
        full = np.zeros(grid.n_edges)
        full[grid.edge_interior] = values
        return cls(grid, full, tangential_zero=True)

    def with_zero_boundary(self) -> "EdgeField":
        return EdgeField.from_interior(self.grid, self.interior())


FIELD_TYPES = {cls.kind: cls for cls in (ScalarField, FaceField, EdgeField)}


def check_same_grid(*fields) -> Grid:
    grid = fields[0].grid
    for f in fields[1:]:
        if f.grid != grid:
            raise GridMismatchError(f"grid n={grid.n} vs n={f.grid.n}")
    return grid


def load_field(path):
    """Read a field written by :meth:`_Field.dump`."""
    raw = Path(path).read_bytes()
    end = raw.index(b"\n")
    header = raw[:end].decode("ascii")
    if not header.startswith(DUMP_MAGIC):
        raise ValueError(f"not a HALLFIELD dump: {header[:40]!r}")
    meta = dict(tok.split("=", 1) for tok in header[len(DUMP_MAGIC):].split())
    if meta.get("order") != "x-fastest" or meta.get("endian") != "little" or meta.get("fp") != "64":
        raise ValueError(f"unsupported dump layout: {header}")
    cls = FIELD_TYPES[meta["kind"]]
    data = np.frombuffer(raw[end + 1:], dtype="<f8").astype(np.float64)
    return cls(Grid(int(meta["n"])), data)
