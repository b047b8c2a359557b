"""Uniform Cartesian grids, nodal fields, and the discrete norms built on them.

Everything downstream (energies, solvers, measures, experiments) works on the
structures defined here:

* ``Grid`` -- a tensor-product grid on a box, 1 <= dim <= 3,
* ``GridFunction`` -- one float64 value per node (immutable),
* ``SpaceTimeGrid`` / ``SpaceTimeFunction`` -- a spatial grid marched over
  uniform time levels,
* ``PParams`` -- the exponent bundle (p, p') with p > 2 enforced.

Quadrature conventions: L^r quantities use mass-lumped (trapezoidal) node
weights; gradient quantities are exact integrals of the piecewise-affine
interpolant on the Kuhn simplicial split of each cell.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.typing import NDArray

__all__ = [
    "PParams",
    "Grid",
    "Box",
    "Cylinder",
    "GridFunction",
    "SpaceTimeGrid",
    "SpaceTimeFunction",
    "gradient",
    "lr_norm",
    "w1q_seminorm",
    "w1q_norm",
    "parabolic_sobolev_norm",
    "parabolic_sobolev_seminorm",
    "dump_field",
    "load_field",
    "dump_spacetime",
]

_SNAP_RTOL = 1e-12


@dataclass(frozen=True)
class PParams:
    """Exponent bundle for the degenerate case p > 2; ``p_conj`` is p/(p-1)."""

    p: float
    p_conj: float = field(init=False)

    def __post_init__(self) -> None:
        if not (self.p > 2.0 and math.isfinite(self.p)):
            raise ValueError(f"p must be a finite real > 2, got {self.p}")
        object.__setattr__(self, "p_conj", self.p / (self.p - 1.0))


@dataclass(frozen=True)
class Box:
    """Axis-aligned subdomain request; snapped outward to grid nodes on use."""

    lo: tuple[float, ...]
    hi: tuple[float, ...]

    def __post_init__(self) -> None:
        lo = tuple(float(v) for v in np.atleast_1d(self.lo))
        hi = tuple(float(v) for v in np.atleast_1d(self.hi))
        if len(lo) != len(hi):
            raise ValueError("lo and hi must have the same length")
        if any(a > b for a, b in zip(lo, hi)):
            raise ValueError("box must satisfy lo <= hi on every axis")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)


@dataclass(frozen=True)
class Cylinder:
    """Space-time subdomain: a spatial Box over the time window (t_lo, t_hi]."""

    space: Box
    t_lo: float
    t_hi: float


class Grid:
    """Uniform tensor-product grid with at least two nodes per axis.

    Parameters
    ----------
    extent : sequence of (a, b) pairs, one per axis, a < b
    shape : node count per axis (>= 2)
    """

    def __init__(self, extent, shape) -> None:
        extent = tuple((float(a), float(b)) for a, b in extent)
        shape = tuple(int(m) for m in np.atleast_1d(shape))
        if len(extent) != len(shape):
            raise ValueError("extent and shape must agree in length")
        if not 1 <= len(shape) <= 3:
            raise ValueError("only dimensions 1..3 are supported")
        if any(m < 2 for m in shape):
            raise ValueError("need at least 2 nodes per axis")
        if any(b <= a for a, b in extent):
            raise ValueError("extent intervals must have positive length")
        self.extent = extent
        self.shape = shape
        self.dim = len(shape)
        self.h = tuple((b - a) / (m - 1) for (a, b), m in zip(extent, shape))

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, Grid)
            and self.shape == other.shape
            and self.extent == other.extent
        )

    def __hash__(self) -> int:
        return hash((self.shape, self.extent))

    def __repr__(self) -> str:
        return f"Grid(extent={self.extent}, shape={self.shape})"

    @property
    def node_count(self) -> int:
        return int(np.prod(self.shape))

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.h))

    def axis_coords(self, k: int) -> NDArray[np.float64]:
        a, b = self.extent[k]
        return np.linspace(a, b, self.shape[k])

    def coords(self) -> list[NDArray[np.float64]]:
        """Meshgrid of node coordinates, one array per axis (ij indexing)."""
        axes = [self.axis_coords(k) for k in range(self.dim)]
        return list(np.meshgrid(*axes, indexing="ij"))

    def sample(self, fn) -> "GridFunction":
        """Evaluate ``fn(*coordinate_arrays)`` at the nodes."""
        vals = np.asarray(fn(*self.coords()), dtype=float)
        return GridFunction(self, np.broadcast_to(vals, self.shape).copy())

    def zeros(self) -> "GridFunction":
        return GridFunction(self, np.zeros(self.shape))

    def full(self, value: float) -> "GridFunction":
        return GridFunction(self, np.full(self.shape, float(value)))

    @property
    def boundary_mask(self) -> NDArray[np.bool_]:
        mask = np.zeros(self.shape, dtype=bool)
        for k in range(self.dim):
            sl = [slice(None)] * self.dim
            sl[k] = 0
            mask[tuple(sl)] = True
            sl[k] = -1
            mask[tuple(sl)] = True
        return mask

    @property
    def interior_mask(self) -> NDArray[np.bool_]:
        return ~self.boundary_mask

    def node_weights(self, slices: tuple[slice, ...] | None = None) -> NDArray[np.float64]:
        """Mass-lumped quadrature weights on the (sub)box given by ``slices``.

        Trapezoidal: full cell volume at interior nodes of the box, halved per
        axis on the box faces, so the weights sum exactly to the box volume.
        """
        if slices is None:
            slices = tuple(slice(0, m) for m in self.shape)
        w = np.ones([s.stop - s.start for s in slices])
        for k, s in enumerate(slices):
            edge = np.ones(s.stop - s.start)
            edge[0] *= 0.5
            edge[-1] *= 0.5
            shape1 = [1] * self.dim
            shape1[k] = edge.size
            w = w * edge.reshape(shape1) * self.h[k]
        return w

    def snap(self, box: Box) -> tuple[slice, ...]:
        """Index slices of the smallest node-aligned box containing ``box``."""
        if len(box.lo) != self.dim:
            raise ValueError("box dimension does not match grid")
        slices = []
        for k in range(self.dim):
            a, b = self.extent[k]
            tol = _SNAP_RTOL * (b - a)
            if box.lo[k] < a - tol or box.hi[k] > b + tol:
                raise ValueError("subdomain is not contained in the grid extent")
            h = self.h[k]
            i_lo = int(math.floor((box.lo[k] - a) / h + _SNAP_RTOL * 10))
            i_hi = int(math.ceil((box.hi[k] - a) / h - _SNAP_RTOL * 10))
            i_lo = max(0, min(i_lo, self.shape[k] - 2))
            i_hi = max(i_lo + 1, min(i_hi, self.shape[k] - 1))
            slices.append(slice(i_lo, i_hi + 1))
        return tuple(slices)

    def subgrid(self, slices: tuple[slice, ...]) -> "Grid":
        extent = []
        shape = []
        for k, s in enumerate(slices):
            coords = self.axis_coords(k)
            extent.append((float(coords[s.start]), float(coords[s.stop - 1])))
            shape.append(s.stop - s.start)
        return Grid(extent, shape)


class GridFunction:
    """Immutable nodal scalar field on a :class:`Grid`.

    Values are float64; ``+inf`` is tolerated as a pole sentinel (norms and
    solvers reject it where finiteness is part of their contract).
    """

    def __init__(self, grid: Grid, values) -> None:
        vals = np.asarray(values, dtype=float)
        if vals.shape != grid.shape:
            raise ValueError(f"values shape {vals.shape} != grid shape {grid.shape}")
        vals = vals.copy()
        vals.setflags(write=False)
        self.grid = grid
        self.values = vals

    def _check_same_grid(self, other: "GridFunction") -> None:
        if self.grid != other.grid:
            raise ValueError("grid mismatch in GridFunction arithmetic")

    def __add__(self, other):
        if isinstance(other, GridFunction):
            self._check_same_grid(other)
            return GridFunction(self.grid, self.values + other.values)
        return GridFunction(self.grid, self.values + float(other))

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, GridFunction):
            self._check_same_grid(other)
            return GridFunction(self.grid, self.values - other.values)
        return GridFunction(self.grid, self.values - float(other))

    def __mul__(self, a):
        return GridFunction(self.grid, self.values * float(a))

    __rmul__ = __mul__

    def __neg__(self):
        return GridFunction(self.grid, -self.values)

    def minimum(self, other: "GridFunction | float") -> "GridFunction":
        if isinstance(other, GridFunction):
            self._check_same_grid(other)
            return GridFunction(self.grid, np.minimum(self.values, other.values))
        return GridFunction(self.grid, np.minimum(self.values, float(other)))

    def maximum(self, other: "GridFunction | float") -> "GridFunction":
        if isinstance(other, GridFunction):
            self._check_same_grid(other)
            return GridFunction(self.grid, np.maximum(self.values, other.values))
        return GridFunction(self.grid, np.maximum(self.values, float(other)))

    def restrict(self, slices: tuple[slice, ...], sub: Grid | None = None) -> "GridFunction":
        """Restriction onto a node-aligned subgrid (exact value copy)."""
        if sub is None:
            sub = self.grid.subgrid(slices)
        return GridFunction(sub, self.values[slices])

    def max_abs(self) -> float:
        return float(np.max(np.abs(self.values)))


@dataclass(frozen=True)
class SpaceTimeGrid:
    """Spatial grid marched over ``steps`` uniform implicit-Euler levels."""

    spatial: Grid
    t0: float
    t1: float
    steps: int

    def __post_init__(self) -> None:
        if not self.t0 < self.t1:
            raise ValueError("need t0 < t1")
        if self.steps < 1:
            raise ValueError("need at least one time step")

    @property
    def tau(self) -> float:
        return (self.t1 - self.t0) / self.steps

    def time(self, k: int) -> float:
        return self.t0 + k * self.tau

    def times(self) -> NDArray[np.float64]:
        return self.t0 + self.tau * np.arange(self.steps + 1)


class SpaceTimeFunction:
    """One GridFunction per time level 0..steps, all on the same spatial grid."""

    def __init__(self, grid: SpaceTimeGrid, slices) -> None:
        slices = list(slices)
        if len(slices) != grid.steps + 1:
            raise ValueError("need steps+1 slices")
        for s in slices:
            if s.grid != grid.spatial:
                raise ValueError("all slices must live on the space-time grid's spatial grid")
        self.grid = grid
        self.slices = tuple(slices)

    @classmethod
    def sample(cls, grid: SpaceTimeGrid, fn) -> "SpaceTimeFunction":
        """Evaluate ``fn(*space_coords, t)`` slice by slice."""
        out = []
        for k in range(grid.steps + 1):
            t = grid.time(k)
            out.append(grid.spatial.sample(lambda *xs: fn(*xs, t)))
        return cls(grid, out)

    def __sub__(self, other: "SpaceTimeFunction") -> "SpaceTimeFunction":
        if self.grid != other.grid:
            raise ValueError("space-time grid mismatch")
        return SpaceTimeFunction(self.grid, [a - b for a, b in zip(self.slices, other.slices)])

    def minimum(self, other) -> "SpaceTimeFunction":
        if isinstance(other, SpaceTimeFunction):
            if self.grid != other.grid:
                raise ValueError("space-time grid mismatch")
            return SpaceTimeFunction(self.grid, [a.minimum(b) for a, b in zip(self.slices, other.slices)])
        return SpaceTimeFunction(self.grid, [a.minimum(other) for a in self.slices])

    def max_abs(self) -> float:
        return max(s.max_abs() for s in self.slices)


# -- Kuhn simplicial split -------------------------------------------------
#
# Each cell is split into dim! simplices, one per permutation pi of the axes:
# vertex 0 is the low corner, vertex j+1 adds the unit offset along pi[j].
# The affine interpolant's gradient component along axis pi[j] is the forward
# difference between vertices j+1 and j divided by the spacing.  This makes
# gradients exact for affine data in any dimension with no geometry tables.


def _perm_offsets(perm: tuple[int, ...], dim: int) -> list[tuple[int, ...]]:
    offs = [tuple([0] * dim)]
    cur = [0] * dim
    for axis in perm:
        cur = cur.copy()
        cur[axis] += 1
        offs.append(tuple(cur))
    return offs


def _cell_slice(offset: tuple[int, ...], shape: tuple[int, ...]) -> tuple[slice, ...]:
    return tuple(slice(o, o + m - 1) for o, m in zip(offset, shape))


def simplex_permutations(dim: int) -> list[tuple[int, ...]]:
    return list(itertools.permutations(range(dim)))


def gradient(f: GridFunction) -> NDArray[np.float64]:
    """Exact gradients of the piecewise-affine interpolant of ``f``.

    Returns an array of shape ``(dim!, *cells, dim)``: one constant gradient
    per Kuhn simplex, indexed by permutation then cell.  The volume of every
    simplex is ``grid.cell_volume / dim!``.
    """
    grid = f.grid
    dim = grid.dim
    u = f.values
    perms = simplex_permutations(dim)
    cells = tuple(m - 1 for m in grid.shape)
    out = np.empty((len(perms),) + cells + (dim,))
    for ip, perm in enumerate(perms):
        offs = _perm_offsets(perm, dim)
        for j, axis in enumerate(perm):
            d = (u[_cell_slice(offs[j + 1], grid.shape)] - u[_cell_slice(offs[j], grid.shape)]) / grid.h[axis]
            out[ip][..., axis] = d
    return out


def simplex_volume(grid: Grid) -> float:
    return grid.cell_volume / math.factorial(grid.dim)


def _resolve_sub(grid: Grid, sub: Box | None) -> tuple[slice, ...]:
    if sub is None:
        return tuple(slice(0, m) for m in grid.shape)
    return grid.snap(sub)


def lr_norm(f: GridFunction, r: float, sub: Box | None = None) -> float:
    """Discrete L^r norm over the (sub)domain with mass-lumped quadrature."""
    if not (r >= 1.0 and math.isfinite(r)):
        raise ValueError(f"exponent r must satisfy 1 <= r < inf, got {r}")
    slices = _resolve_sub(f.grid, sub)
    vals = f.values[slices]
    if not np.all(np.isfinite(vals)):
        raise ValueError("non-finite values inside the requested subdomain")
    w = f.grid.node_weights(slices)
    return float(np.sum(np.abs(vals) ** r * w) ** (1.0 / r))


def _gradient_cells_in(grid: Grid, slices: tuple[slice, ...]) -> tuple[slice, ...]:
    # cells fully inside the snapped node box
    return tuple(slice(s.start, s.stop - 1) for s in slices)


def w1q_seminorm(f: GridFunction, q: float, sub: Box | None = None) -> float:
    """L^q norm of |grad f| over the cells contained in the (sub)domain."""
    if not (q >= 1.0 and math.isfinite(q)):
        raise ValueError(f"exponent q must satisfy 1 <= q < inf, got {q}")
    slices = _resolve_sub(f.grid, sub)
    vals = f.values[slices]
    if not np.all(np.isfinite(vals)):
        raise ValueError("non-finite values inside the requested subdomain")
    g = gradient(f)
    csl = _gradient_cells_in(f.grid, slices)
    gsub = g[(slice(None),) + csl]
    mag = np.sqrt(np.sum(gsub * gsub, axis=-1))
    return float((np.sum(mag**q) * simplex_volume(f.grid)) ** (1.0 / q))


def w1q_norm(f: GridFunction, q: float, sub: Box | None = None) -> float:
    """``lr_norm(f, q, sub) + w1q_seminorm(f, q, sub)`` (Sobolev-style sum)."""
    return lr_norm(f, q, sub) + w1q_seminorm(f, q, sub)


def _time_slice_indices(grid: SpaceTimeGrid, sub: Cylinder | None) -> range:
    if sub is None:
        return range(1, grid.steps + 1)
    tol = _SNAP_RTOL * (grid.t1 - grid.t0)
    ks = [
        k
        for k in range(1, grid.steps + 1)
        if grid.time(k) > sub.t_lo + tol and grid.time(k) <= sub.t_hi + tol
    ]
    if not ks:
        raise ValueError("time window contains no levels")
    return range(ks[0], ks[-1] + 1)


def parabolic_sobolev_norm(F: SpaceTimeFunction, q: float, sub: Cylinder | None = None) -> float:
    """Discrete L^q-in-time W^{1,q}-in-space norm over a space-time cylinder.

    Implements ``(sum_k tau * (|F|^q + |grad F|^q integrals))^(1/q)`` over the
    levels whose time lies in the window; the level-0 slice never contributes
    (left-open Riemann sum).
    """
    if not (q >= 1.0 and math.isfinite(q)):
        raise ValueError(f"exponent q must satisfy 1 <= q < inf, got {q}")
    box = sub.space if sub is not None else None
    total = 0.0
    for k in _time_slice_indices(F.grid, sub):
        fk = F.slices[k]
        total += F.grid.tau * (lr_norm(fk, q, box) ** q + w1q_seminorm(fk, q, box) ** q)
    return float(total ** (1.0 / q))


def parabolic_sobolev_seminorm(F: SpaceTimeFunction, q: float, sub: Cylinder | None = None) -> float:
    """Gradient-only part of :func:`parabolic_sobolev_norm`."""
    box = sub.space if sub is not None else None
    total = 0.0
    for k in _time_slice_indices(F.grid, sub):
        total += F.grid.tau * w1q_seminorm(F.slices[k], q, box) ** q
    return float(total ** (1.0 / q))


# -- raw field dumps -------------------------------------------------------


def dump_field(f: GridFunction, path, measure: bool = False) -> Path:
    """Write a field as one JSON header line + row-major little-endian f64."""
    path = Path(path)
    header = {
        "dim": f.grid.dim,
        "cells": list(f.grid.shape),
        "extent": [list(e) for e in f.grid.extent],
    }
    if measure:
        header["measure"] = True
    with open(path, "wb") as fh:
        fh.write(json.dumps(header).encode("ascii") + b"\n")
        fh.write(np.ascontiguousarray(f.values, dtype="<f8").tobytes())
    return path


def load_field(path) -> GridFunction:
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode("ascii"))
        raw = fh.read()
    grid = Grid([tuple(e) for e in header["extent"]], header["cells"])
    vals = np.frombuffer(raw, dtype="<f8").reshape(grid.shape)
    return GridFunction(grid, vals)


def dump_spacetime(F: SpaceTimeFunction, directory, basename: str) -> list[Path]:
    """One raw field file per time level: ``<basename>.k<index>.field``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for k, s in enumerate(F.slices):
        paths.append(dump_field(s, directory / f"{basename}.k{k:04d}.field"))
    return paths
