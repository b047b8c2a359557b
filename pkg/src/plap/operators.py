"""Discrete p-Dirichlet energies, p-Laplacians, and supersolution predicates.

Two discretizations of the same energy are provided:

* ``"simplex"`` -- the piecewise-affine energy on the Kuhn split of each cell;
  consistent with the continuum operator, used for every quantitative
  (exact-solution, rate) experiment.
* ``"edge"`` -- the graph p-Laplacian over grid edges with trapezoidal edge
  weights; for p != 2 it discretizes an anisotropic relative of the operator,
  but it is monotone, which is what the structural closure properties
  (pointwise minima, comparison fuzzing) rely on.

Sign convention: ``p_laplacian_apply`` returns the derivative of the
(data-free) energy with respect to nodal values divided by the lumped node
volume, i.e. the discrete density of ``-div(|grad u|^{p-2} grad u)``.  A
discrete supersolution therefore has nonnegative values at interior nodes,
matching the weak inequality tested against nodal hat functions.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Literal

import numpy as np
import scipy.sparse as sp
from numpy.typing import NDArray

from .grids import (
    Grid,
    GridFunction,
    PParams,
    Box,
    SpaceTimeFunction,
    _cell_slice,
    _perm_offsets,
    simplex_permutations,
    simplex_volume,
)

__all__ = [
    "Scheme",
    "OperatorReport",
    "p_energy",
    "p_laplacian_apply",
    "is_supersolution",
    "comparison_check",
    "parabolic_supersolution_check",
    "assembler_for",
]

Scheme = Literal["simplex", "edge"]


def _check_scheme(scheme: str) -> None:
    if scheme not in ("simplex", "edge"):
        raise ValueError(f"unknown scheme {scheme!r}; expected 'simplex' or 'edge'")


@dataclass
class OperatorReport:
    """Residual field plus the list of nodes violating the sign condition.

    ``violating_nodes`` holds flat C-order node indices; the parabolic check
    uses ``(level, node)`` pairs.  ``max_violation`` is the largest amount by
    which the residual dips below zero on those nodes (0.0 if none).
    """

    residual: object
    max_violation: float
    violating_nodes: list

    @property
    def passed(self) -> bool:
        return len(self.violating_nodes) == 0

    def max_abs_residual(self) -> float:
        if isinstance(self.residual, GridFunction):
            return self.residual.max_abs()
        return max(r.max_abs() for r in self.residual)

    def to_json(self) -> str:
        return json.dumps(
            {
                "max_violation": self.max_violation,
                "count": len(self.violating_nodes),
                "nodes": [list(v) if isinstance(v, tuple) else v for v in self.violating_nodes],
            }
        )


# -- assemblers ------------------------------------------------------------


class SimplexAssembler:
    """Energy / gradient / Hessian of the piecewise-affine p-energy.

    The Hessian is evaluated with ``|g|^2`` replaced by ``|g|^2 + delta^2``
    (delta supplied per call); energy and gradient are always exact.
    """

    def __init__(self, grid: Grid, p: float) -> None:
        self.grid = grid
        self.p = p
        self.vol = simplex_volume(grid)
        self.perms = simplex_permutations(grid.dim)
        dim = grid.dim
        # per permutation: difference matrix B (dim x (dim+1)) in local coords
        self._B = []
        for perm in self.perms:
            B = np.zeros((dim, dim + 1))
            for j, axis in enumerate(perm):
                B[j, j] = -1.0 / grid.h[axis]
                B[j, j + 1] = 1.0 / grid.h[axis]
            self._B.append(B)
        idx = np.arange(grid.node_count).reshape(grid.shape)
        self._vert_idx = []  # per perm: (dim+1, ncells) node indices
        for perm in self.perms:
            offs = _perm_offsets(perm, dim)
            self._vert_idx.append(
                np.stack([idx[_cell_slice(o, grid.shape)].ravel() for o in offs])
            )
        rows, cols = [], []
        for vi in self._vert_idx:
            nv = vi.shape[0]
            for a in range(nv):
                for b in range(nv):
                    rows.append(vi[a])
                    cols.append(vi[b])
        self._rows = np.concatenate(rows)
        self._cols = np.concatenate(cols)

    def _diffs(self, u: NDArray) -> list[NDArray]:
        """Per permutation: local difference vector d, shape (ncells, dim)."""
        grid = self.grid
        out = []
        for perm in self.perms:
            offs = _perm_offsets(perm, grid.dim)
            ds = []
            for j, axis in enumerate(perm):
                d = (
                    u[_cell_slice(offs[j + 1], grid.shape)]
                    - u[_cell_slice(offs[j], grid.shape)]
                ) / grid.h[axis]
                ds.append(d.ravel())
            out.append(np.stack(ds, axis=-1))
        return out

    def energy(self, u: NDArray) -> float:
        p = self.p
        total = 0.0
        for d in self._diffs(u):
            g2 = np.sum(d * d, axis=-1)
            total += np.sum(g2 ** (p / 2.0))
        return float(total * self.vol / p)

    def grad(self, u: NDArray) -> NDArray:
        """dE/du per node (mass units), full grid shape."""
        grid = self.grid
        p = self.p
        out = np.zeros(grid.shape)
        for perm, d in zip(self.perms, self._diffs(u)):
            g2 = np.sum(d * d, axis=-1)
            coef = g2 ** ((p - 2.0) / 2.0)  # |g|^{p-2}, p>2 so fine at g=0
            offs = _perm_offsets(perm, grid.dim)
            cells = tuple(m - 1 for m in grid.shape)
            for j, axis in enumerate(perm):
                flux = (self.vol / grid.h[axis]) * (coef * d[:, j]).reshape(cells)
                out[_cell_slice(offs[j + 1], grid.shape)] += flux
                out[_cell_slice(offs[j], grid.shape)] -= flux
        return out

    def hessian(self, u: NDArray, delta: float) -> sp.csr_matrix:
        p = self.p
        vals = []
        for B, d in zip(self._B, self._diffs(u)):
            gamma = np.sum(d * d, axis=-1) + delta * delta
            s1 = self.vol * gamma ** ((p - 2.0) / 2.0)
            # limit of (p-2) gamma^{(p-4)/2} d d^T is 0 as gamma -> 0 for p > 2
            with np.errstate(divide="ignore"):
                s2 = self.vol * (p - 2.0) * np.where(gamma > 0.0, gamma, 1.0) ** ((p - 4.0) / 2.0)
            s2 = np.where(gamma > 0.0, s2, 0.0)
            BtB = B.T @ B
            Btd = d @ B  # (ncells, dim+1)
            nv = B.shape[1]
            for a in range(nv):
                for b in range(nv):
                    vals.append(s1 * BtB[a, b] + s2 * Btd[:, a] * Btd[:, b])
        data = np.concatenate(vals)
        n = self.grid.node_count
        return sp.coo_matrix((data, (self._rows, self._cols)), shape=(n, n)).tocsr()


class EdgeAssembler:
    """Graph p-Laplacian energy over grid edges (monotone scheme).

    Edge (i, i+e_a) carries weight ``h_a * prod_{k!=a} w_k`` with trapezoidal
    transverse weights, so the p = 2 energy is the standard finite-difference
    Dirichlet energy.
    """

    def __init__(self, grid: Grid, p: float) -> None:
        self.grid = grid
        self.p = p
        idx = np.arange(grid.node_count).reshape(grid.shape)
        self._axes = []
        for a in range(grid.dim):
            sl_lo = [slice(None)] * grid.dim
            sl_hi = [slice(None)] * grid.dim
            sl_lo[a] = slice(0, grid.shape[a] - 1)
            sl_hi[a] = slice(1, grid.shape[a])
            w = np.ones([m for k, m in enumerate(grid.shape) if k != a])
            kk = 0
            for k in range(grid.dim):
                if k == a:
                    continue
                edge = np.ones(grid.shape[k])
                edge[0] *= 0.5
                edge[-1] *= 0.5
                shape1 = [1] * (grid.dim - 1)
                shape1[kk] = grid.shape[k]
                w = w * (edge * grid.h[k]).reshape(shape1)
                kk += 1
            # broadcast transverse weights to edge array shape
            eshape = list(grid.shape)
            eshape[a] -= 1
            if grid.dim > 1:
                wfull = np.broadcast_to(np.expand_dims(w, a), eshape).copy()
            else:
                wfull = np.ones(eshape)
            self._axes.append(
                {
                    "lo": tuple(sl_lo),
                    "hi": tuple(sl_hi),
                    "h": grid.h[a],
                    "w": (wfull * grid.h[a]).ravel(),
                    "ilo": idx[tuple(sl_lo)].ravel(),
                    "ihi": idx[tuple(sl_hi)].ravel(),
                }
            )

    def energy(self, u: NDArray) -> float:
        p = self.p
        total = 0.0
        for ax in self._axes:
            d = (u[ax["hi"]] - u[ax["lo"]]).ravel() / ax["h"]
            total += np.sum(np.abs(d) ** p * ax["w"])
        return float(total / p)

    def grad(self, u: NDArray) -> NDArray:
        p = self.p
        out = np.zeros(self.grid.shape)
        for ax in self._axes:
            d = (u[ax["hi"]] - u[ax["lo"]]) / ax["h"]
            phi = np.abs(d) ** (p - 2.0) * d
            flux = phi * (ax["w"] / ax["h"]).reshape(d.shape)
            out[ax["hi"]] += flux
            out[ax["lo"]] -= flux
        return out

    def hessian(self, u: NDArray, delta: float) -> sp.csr_matrix:
        p = self.p
        rows, cols, vals = [], [], []
        for ax in self._axes:
            d = ((u[ax["hi"]] - u[ax["lo"]]).ravel()) / ax["h"]
            coef = (p - 1.0) * (d * d + delta * delta) ** ((p - 2.0) / 2.0)
            coef = coef * ax["w"] / (ax["h"] * ax["h"])
            i, j = ax["ilo"], ax["ihi"]
            rows += [i, j, i, j]
            cols += [i, j, j, i]
            vals += [coef, coef, -coef, -coef]
        n = self.grid.node_count
        return sp.coo_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(n, n),
        ).tocsr()


@lru_cache(maxsize=32)
def assembler_for(grid: Grid, p: float, scheme: Scheme):
    _check_scheme(scheme)
    return SimplexAssembler(grid, p) if scheme == "simplex" else EdgeAssembler(grid, p)


# -- public operations -----------------------------------------------------


def _data_masses(grid: Grid, f) -> NDArray | None:
    if f is None:
        return None
    mass = np.asarray(getattr(f, "mass", f), dtype=float)
    if mass.shape != grid.shape:
        raise ValueError("data masses do not match the grid")
    return mass


def p_energy(u: GridFunction, P: PParams, scheme: Scheme = "simplex", f=None) -> float:
    """Discrete p-Dirichlet energy ``(1/p) int |grad u|^p - <f, u>``."""
    if not np.all(np.isfinite(u.values)):
        raise ValueError("p_energy requires finite nodal values")
    asm = assembler_for(u.grid, P.p, scheme)
    e = asm.energy(u.values)
    mass = _data_masses(u.grid, f)
    if mass is not None:
        e -= float(np.sum(mass * u.values))
    return e


def p_laplacian_apply(u: GridFunction, P: PParams, scheme: Scheme = "simplex") -> GridFunction:
    """Nodal density of the discrete ``-div(|grad u|^{p-2} grad u)``.

    Energy derivative divided by the lumped node volume; boundary nodes carry
    the one-sided flux density and are ignored by the supersolution tests.
    """
    if not np.all(np.isfinite(u.values)):
        raise ValueError("p_laplacian_apply requires finite nodal values")
    asm = assembler_for(u.grid, P.p, scheme)
    return GridFunction(u.grid, asm.grad(u.values) / u.grid.node_weights())


def _interior_violations(res: NDArray, interior: NDArray, tol: float):
    viol = interior & (res < -tol)
    nodes = np.flatnonzero(viol.ravel())
    max_violation = float(-res[viol].min()) if nodes.size else 0.0
    return nodes, max_violation


def is_supersolution(
    u: GridFunction, P: PParams, scheme: Scheme = "simplex", tol: float = 0.0
) -> OperatorReport:
    """Check the discrete weak inequality against all interior hat functions."""
    if tol < 0:
        raise ValueError("tol must be nonnegative")
    apply = p_laplacian_apply(u, P, scheme)
    interior = u.grid.interior_mask
    res = np.where(interior, apply.values, 0.0)
    nodes, max_violation = _interior_violations(res, interior, tol)
    return OperatorReport(GridFunction(u.grid, res), max_violation, list(map(int, nodes)))


def comparison_check(
    u: GridFunction,
    P: PParams,
    scheme: Scheme,
    sub: Box,
    tol: float,
    opts=None,
) -> bool:
    """Solve the data-free Dirichlet problem on ``sub`` with boundary values
    from ``u`` and test ``u >= h - tol`` there (comparison against solutions).
    """
    from .elliptic import SolverOptions, solve_dirichlet

    slices = u.grid.snap(sub)
    subgrid = u.grid.subgrid(slices)
    usub = u.restrict(slices, subgrid)
    if not np.all(np.isfinite(usub.values)):
        raise ValueError("comparison_check requires finite values on the subdomain closure")
    h = solve_dirichlet(subgrid, P, None, usub, opts or SolverOptions(), scheme=scheme)
    return bool(np.all(usub.values >= h.values - tol))


def parabolic_supersolution_check(
    U: SpaceTimeFunction, P: PParams, scheme: Scheme = "simplex", tol: float = 0.0
) -> OperatorReport:
    """Implicit-Euler residual check ``(U_k - U_{k-1})/tau - Delta_p U_k >= -tol``
    at every interior node of every level k >= 1.
    """
    if tol < 0:
        raise ValueError("tol must be nonnegative")
    stg = U.grid
    grid = stg.spatial
    interior = grid.interior_mask
    residuals = []
    violating: list[tuple[int, int]] = []
    max_violation = 0.0
    for k in range(1, stg.steps + 1):
        apply = p_laplacian_apply(U.slices[k], P, scheme)
        res = (U.slices[k].values - U.slices[k - 1].values) / stg.tau + apply.values
        res = np.where(interior, res, 0.0)
        nodes, mv = _interior_violations(res, interior, tol)
        violating.extend((k, int(i)) for i in nodes)
        max_violation = max(max_violation, mv)
        residuals.append(GridFunction(grid, res))
    return OperatorReport(residuals, max_violation, violating)
