"""Grids, domain partitions and conductivity fields.

Everything lives on a cell-centered uniform grid covering the box
``[-R, R]^n`` with ``n`` in {1, 2}. Shapes are rasterized by cell-center
membership, and cells are numbered in C order (last axis fastest).
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Iterable, Sequence, Union

import numpy as np

from fracmono.errors import ValidationError

__all__ = [
    "GridSpec",
    "Box",
    "Ball",
    "Shell",
    "CellList",
    "Geometry",
    "DomainPartition",
    "Conductivity",
    "build_partition",
    "make_conductivity",
    "conductivity_from_values",
    "exterior_data",
    "index_distance",
]

_MEMBERSHIP_TOL = 1e-12


@dataclass(frozen=True)
class GridSpec:
    """Uniform cell-centered grid on ``[-half_width, half_width]^n_dims``."""

    n_dims: int
    cells_per_axis: int
    half_width: float

    def __post_init__(self) -> None:
        if self.n_dims not in (1, 2):
            raise ValidationError(f"n_dims must be 1 or 2, got {self.n_dims}")
        if int(self.cells_per_axis) != self.cells_per_axis or self.cells_per_axis < 8:
            raise ValidationError(f"cells_per_axis must be an integer >= 8, got {self.cells_per_axis}")
        if not np.isfinite(self.half_width) or self.half_width <= 0:
            raise ValidationError(f"half_width must be positive, got {self.half_width}")

    @property
    def spacing(self) -> float:
        return 2.0 * self.half_width / self.cells_per_axis

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.cells_per_axis,) * self.n_dims

    @property
    def n_cells(self) -> int:
        return self.cells_per_axis**self.n_dims

    @property
    def cell_volume(self) -> float:
        return self.spacing**self.n_dims

    def axis_centers(self) -> np.ndarray:
        h = self.spacing
        return -self.half_width + (np.arange(self.cells_per_axis) + 0.5) * h

    def centers(self) -> np.ndarray:
        """Cell centers as an ``(n_cells, n_dims)`` array."""
        c = self.axis_centers()
        mesh = np.meshgrid(*([c] * self.n_dims), indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def multi_index(self, cells: np.ndarray) -> np.ndarray:
        """Integer grid coordinates ``(len(cells), n_dims)`` of flat indices."""
        return np.stack(np.unravel_index(np.asarray(cells, dtype=int), self.shape), axis=1)

    def digest(self) -> str:
        key = f"{self.n_dims}:{self.cells_per_axis}:{float(self.half_width).hex()}"
        return hashlib.sha256(key.encode()).hexdigest()[:16]


@dataclass(frozen=True)
class Box:
    """Closed axis-aligned box ``lo <= x <= hi``."""

    lo: tuple[float, ...]
    hi: tuple[float, ...]

    def contains(self, pts: np.ndarray) -> np.ndarray:
        lo = np.asarray(self.lo, dtype=float)
        hi = np.asarray(self.hi, dtype=float)
        _check_dims(lo, pts, "box")
        return np.all((pts >= lo - _MEMBERSHIP_TOL) & (pts <= hi + _MEMBERSHIP_TOL), axis=1)


@dataclass(frozen=True)
class Ball:
    """Closed Euclidean ball."""

    center: tuple[float, ...]
    radius: float

    def contains(self, pts: np.ndarray) -> np.ndarray:
        c = np.asarray(self.center, dtype=float)
        _check_dims(c, pts, "ball")
        return np.linalg.norm(pts - c, axis=1) <= self.radius + _MEMBERSHIP_TOL


@dataclass(frozen=True)
class Shell:
    """Max-norm annulus ``inner < |x - center|_inf < outer`` (open on both sides)."""

    center: tuple[float, ...]
    inner: float
    outer: float

    def contains(self, pts: np.ndarray) -> np.ndarray:
        c = np.asarray(self.center, dtype=float)
        _check_dims(c, pts, "shell")
        r = np.max(np.abs(pts - c), axis=1)
        return (r > self.inner + _MEMBERSHIP_TOL) & (r < self.outer - _MEMBERSHIP_TOL)


@dataclass(frozen=True)
class CellList:
    """Explicit flat cell indices."""

    cells: tuple[int, ...]

    def contains(self, pts: np.ndarray) -> np.ndarray:
        mask = np.zeros(len(pts), dtype=bool)
        idx = np.asarray(self.cells, dtype=int)
        if idx.size and (idx.min() < 0 or idx.max() >= len(pts)):
            raise ValidationError("cell list refers to cells outside the grid")
        mask[idx] = True
        return mask


Shape = Union[Box, Ball, Shell, CellList]


def _check_dims(vec: np.ndarray, pts: np.ndarray, name: str) -> None:
    if vec.shape != (pts.shape[1],):
        raise ValidationError(f"{name} has dimension {vec.shape}, grid has {pts.shape[1]}")


@dataclass(frozen=True)
class Geometry:
    """Shape descriptors for the domain, window and optional test sets.

    ``b_set``, ``d_set`` and ``o_set`` are intersected with the domain.
    """

    omega: Shape
    window: Shape
    b_set: Shape | None = None
    d_set: Shape | None = None
    o_set: Shape | None = None


def _as_index(a: Iterable[int] | np.ndarray) -> np.ndarray:
    arr = np.unique(np.asarray(list(a) if not isinstance(a, np.ndarray) else a, dtype=int))
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class DomainPartition:
    """Index sets of a grid: domain, exterior, window and optional test subsets."""

    grid: GridSpec
    omega: np.ndarray
    exterior: np.ndarray
    window: np.ndarray
    b_set: np.ndarray | None = None
    d_set: np.ndarray | None = None
    o_set: np.ndarray | None = None

    def __post_init__(self) -> None:
        for name in ("omega", "exterior", "window", "b_set", "d_set", "o_set"):
            val = getattr(self, name)
            if val is not None:
                object.__setattr__(self, name, _as_index(val))
        self._validate()

    def _validate(self) -> None:
        n = self.grid.n_cells
        if self.omega.size == 0:
            raise ValidationError("domain is empty")
        if self.window.size == 0:
            raise ValidationError("window is empty")
        for name in ("omega", "exterior", "window"):
            arr = getattr(self, name)
            if arr.size and (arr[0] < 0 or arr[-1] >= n):
                raise ValidationError(f"{name} has indices outside the grid")
        if np.intersect1d(self.omega, self.exterior).size:
            raise ValidationError("omega and exterior overlap")
        if self.omega.size + self.exterior.size != n:
            raise ValidationError("omega and exterior do not cover the grid")
        if not np.all(np.isin(self.window, self.exterior)):
            raise ValidationError("window intersects domain closure")
        if index_distance(self.grid, self.window, self.omega) < 2:
            raise ValidationError("window intersects domain closure")
        for name in ("b_set", "d_set", "o_set"):
            arr = getattr(self, name)
            if arr is not None and not np.all(np.isin(arr, self.omega)):
                raise ValidationError(f"{name} is not contained in omega")
        if self.b_set is not None and self.d_set is not None:
            if np.intersect1d(self.b_set, self.d_set).size:
                raise ValidationError("b_set and d_set intersect")
            if self.b_set.size == 0:
                raise ValidationError("b_set minus d_set is empty")

    @property
    def n_cells(self) -> int:
        return self.grid.n_cells

    def omega_mask(self) -> np.ndarray:
        mask = np.zeros(self.n_cells, dtype=bool)
        mask[self.omega] = True
        return mask

    def with_sets(self, **sets: Sequence[int] | None) -> "DomainPartition":
        """Copy with some of ``b_set``, ``d_set``, ``o_set`` replaced."""
        kw = dict(b_set=self.b_set, d_set=self.d_set, o_set=self.o_set)
        kw.update(sets)
        return DomainPartition(self.grid, self.omega, self.exterior, self.window, **kw)

    def digest(self) -> str:
        h = hashlib.sha256(self.grid.digest().encode())
        for arr in (self.omega, self.window):
            h.update(np.ascontiguousarray(arr, dtype=np.int64).tobytes())
        return h.hexdigest()[:16]


def index_distance(grid: GridSpec, a: np.ndarray, b: np.ndarray) -> int:
    """Minimum Chebyshev distance, in cells, between two index sets."""
    ia = grid.multi_index(a)
    ib = grid.multi_index(b)
    best = np.inf
    for chunk in np.array_split(ia, max(1, len(ia) // 256)):
        d = np.abs(chunk[:, None, :] - ib[None, :, :]).max(axis=2)
        best = min(best, int(d.min()))
    return int(best)


def build_partition(grid: GridSpec, geometry: Geometry) -> DomainPartition:
    """Rasterize shapes by cell-center membership.

    The window must be separated from the domain by at least one full cell.

    Raises
    ------
    ValidationError
        If the domain or window is empty, or the window touches the domain closure.
    """
    pts = grid.centers()
    om = geometry.omega.contains(pts)
    win = geometry.window.contains(pts)
    if not om.any():
        raise ValidationError("domain is empty")
    if not win.any():
        raise ValidationError("window is empty")
    if np.any(om & win):
        raise ValidationError("window intersects domain closure")

    def sub(shape: Shape | None) -> np.ndarray | None:
        if shape is None:
            return None
        return np.flatnonzero(shape.contains(pts) & om)

    b = sub(geometry.b_set)
    d = sub(geometry.d_set)
    if b is not None and d is not None:
        b = np.setdiff1d(b, d)
    return DomainPartition(
        grid=grid,
        omega=np.flatnonzero(om),
        exterior=np.flatnonzero(~om),
        window=np.flatnonzero(win),
        b_set=b,
        d_set=d,
        o_set=sub(geometry.o_set),
    )


@dataclass(frozen=True, eq=False)
class Conductivity:
    """Per-cell conductivity with ellipticity constant ``lam`` and order ``s``.

    Values on the domain lie in ``[lam, 1/lam]``; values off the domain are 1.
    """

    values: np.ndarray
    omega: np.ndarray
    lam: float = 0.4
    s: float = 0.5
    _digest: str = field(default="", repr=False)

    def __post_init__(self) -> None:
        vals = np.array(self.values, dtype=float)
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "omega", _as_index(self.omega))
        if not 0.0 < self.lam < 1.0:
            raise ValidationError(f"lambda must lie in (0, 1), got {self.lam}")
        if not 0.0 < self.s < 1.0:
            raise ValidationError(f"order s must lie in (0, 1), got {self.s}")
        inside = np.zeros(vals.size, dtype=bool)
        inside[self.omega] = True
        bad = np.flatnonzero(inside & ~((vals >= self.lam) & (vals <= 1.0 / self.lam)))
        if bad.size:
            c = int(bad[0])
            raise ValidationError(
                f"ellipticity violated at cell {c}: value {vals[c]} outside [{self.lam}, {1.0 / self.lam}]"
            )
        off = np.flatnonzero(~inside & (vals != 1.0))
        if off.size:
            raise ValidationError(f"conductivity must equal 1 off the domain; cell {int(off[0])} has {vals[off[0]]}")
        object.__setattr__(self, "_digest", hashlib.sha256(vals.tobytes()).hexdigest()[:16])

    def digest(self) -> str:
        return self._digest

    def with_order(self, s: float) -> "Conductivity":
        return Conductivity(self.values, self.omega, self.lam, s)


def make_conductivity(
    p: DomainPartition,
    background: float = 1.0,
    inclusions: Sequence[tuple[Sequence[int] | np.ndarray, float]] = (),
    lam: float = 0.4,
    s: float = 0.5,
) -> Conductivity:
    """Background value on the domain, overridden on inclusion cells, 1 elsewhere.

    Raises
    ------
    ValidationError
        If a value leaves the ellipticity band or an inclusion leaves the domain.
    """
    vals = np.ones(p.n_cells)
    vals[p.omega] = background
    for cells, value in inclusions:
        idx = np.asarray(cells, dtype=int)
        if not np.all(np.isin(idx, p.omega)):
            raise ValidationError("inclusion cells must lie in omega")
        vals[idx] = value
    return Conductivity(vals, p.omega, lam, s)


def conductivity_from_values(
    p: DomainPartition, omega_values: np.ndarray, lam: float = 0.4, s: float = 0.5
) -> Conductivity:
    """Conductivity from values listed on the domain cells in index order."""
    vals = np.ones(p.n_cells)
    vals[p.omega] = np.asarray(omega_values, dtype=float)
    return Conductivity(vals, p.omega, lam, s)


def exterior_data(p: DomainPartition, f: np.ndarray) -> np.ndarray:
    """Full-length vector from exterior data.

    ``f`` may be given on all cells (zero on the domain), on the exterior
    cells, or on the window cells, each in index order.
    """
    f = np.asarray(f, dtype=float)
    out = np.zeros(p.n_cells)
    if f.shape == (p.n_cells,):
        if np.any(f[p.omega] != 0.0):
            raise ValidationError("exterior data must vanish on omega")
        out[:] = f
    elif f.shape == (p.exterior.size,):
        out[p.exterior] = f
    elif f.shape == (p.window.size,):
        out[p.window] = f
    else:
        raise ValidationError(
            f"exterior data has shape {f.shape}; expected ({p.n_cells},), ({p.exterior.size},) or ({p.window.size},)"
        )
    return out
