"""Riesz measures, mollification, and negative Sobolev norms via Bessel potentials.

The dual norm realizes ``||nu||_{W^{-1,p'}}`` through the Fourier multiplier
``(1 + |xi|^2)^{-1/2}`` on a zero-padded periodic box (padding factor 2), then
takes the discrete L^{p'} norm of the potential -- the Bessel-space norm, equal
by definition to the norm of the preimage.  It is equivalent, not equal, to
the W^{-1,p'} norm; every quantitative use downstream is through ratios or
slopes, or through an equivalence constant calibrated per grid.

Nodal functionals are stored as signed node masses: ``<nu, phi> = sum_i
nu_i phi(x_i)``.  A density field converts to masses through the lumped node
weights.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray
from scipy.signal import convolve

from .grids import Grid, GridFunction, PParams, SpaceTimeFunction, dump_field
from .operators import Scheme, assembler_for

__all__ = [
    "DiscreteMeasure",
    "NodalFunctional",
    "density_functional",
    "functional_difference",
    "pairing",
    "riesz_measure",
    "riesz_measure_parabolic",
    "mollify",
    "mollify_function",
    "dual_norm",
    "parabolic_dual_norm",
    "dump_measure",
]


@dataclass(frozen=True)
class NodalFunctional:
    """Signed nodal masses; the pairing with a field is the weighted sum."""

    grid: Grid
    weights: NDArray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if w.shape != self.grid.shape:
            raise ValueError("functional weights do not match the grid")
        w = w.copy()
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)


class DiscreteMeasure:
    """Nonnegative nodal masses representing a Radon measure on the grid."""

    def __init__(self, grid: Grid, mass) -> None:
        m = np.asarray(mass, dtype=float)
        if m.shape != grid.shape:
            raise ValueError("mass array does not match the grid")
        if np.any(m < 0):
            raise ValueError("measure masses must be nonnegative")
        if not np.all(np.isfinite(m)):
            raise ValueError("measure masses must be finite")
        m = m.copy()
        m.setflags(write=False)
        self.grid = grid
        self.mass = m

    @classmethod
    def zero(cls, grid: Grid) -> "DiscreteMeasure":
        return cls(grid, np.zeros(grid.shape))

    @classmethod
    def dirac(cls, grid: Grid, point, mass: float = 1.0) -> "DiscreteMeasure":
        """Full mass on the node nearest to ``point`` (no splitting)."""
        point = np.atleast_1d(np.asarray(point, dtype=float))
        idx = tuple(
            int(np.argmin(np.abs(grid.axis_coords(k) - point[k]))) for k in range(grid.dim)
        )
        m = np.zeros(grid.shape)
        m[idx] = mass
        return cls(grid, m)

    @property
    def total(self) -> float:
        return float(self.mass.sum())

    def restrict(self, slices: tuple[slice, ...], sub: Grid | None = None) -> "DiscreteMeasure":
        if sub is None:
            sub = self.grid.subgrid(slices)
        return DiscreteMeasure(sub, self.mass[slices])

    def scaled(self, a: float) -> "DiscreteMeasure":
        if a < 0:
            raise ValueError("measures scale by nonnegative factors")
        return DiscreteMeasure(self.grid, self.mass * a)

    def as_functional(self) -> NodalFunctional:
        return NodalFunctional(self.grid, self.mass)


def density_functional(f: GridFunction) -> NodalFunctional:
    """Nodal masses of a density field: values times lumped node weights."""
    return NodalFunctional(f.grid, f.values * f.grid.node_weights())


def _as_functional(nu) -> NodalFunctional:
    if isinstance(nu, NodalFunctional):
        return nu
    if isinstance(nu, DiscreteMeasure):
        return nu.as_functional()
    if isinstance(nu, GridFunction):
        return density_functional(nu)
    raise TypeError(f"cannot interpret {type(nu).__name__} as a nodal functional")


def functional_difference(a, b) -> NodalFunctional:
    fa, fb = _as_functional(a), _as_functional(b)
    if fa.grid != fb.grid:
        raise ValueError("functional grids differ")
    return NodalFunctional(fa.grid, fa.weights - fb.weights)


def pairing(nu, phi: GridFunction) -> float:
    f = _as_functional(nu)
    if f.grid != phi.grid:
        raise ValueError("pairing requires matching grids")
    return float(np.sum(f.weights * phi.values))


# -- Riesz measures ---------------------------------------------------------


def riesz_measure(
    u: GridFunction, P: PParams, scheme: Scheme = "simplex"
) -> tuple[DiscreteMeasure, GridFunction]:
    """Nodal masses ``mu(phi_j) = int |grad u|^{p-2} grad u . grad phi_j`` for
    interior hats, split into the nonnegative part and a signed remainder.

    For a discrete supersolution the remainder is pure discretization noise;
    its size is itself a consistency diagnostic and is never clipped silently.
    """
    if not np.all(np.isfinite(u.values)):
        raise ValueError("riesz_measure requires finite nodal values")
    asm = assembler_for(u.grid, P.p, scheme)
    g = asm.grad(u.values)
    g = np.where(u.grid.interior_mask, g, 0.0)
    pos = np.maximum(g, 0.0)
    neg = np.minimum(g, 0.0)
    return DiscreteMeasure(u.grid, pos), GridFunction(u.grid, neg)


def riesz_measure_parabolic(
    U: SpaceTimeFunction, P: PParams, scheme: Scheme = "simplex"
) -> tuple[list[DiscreteMeasure], list[GridFunction]]:
    """Slicewise Riesz masses of the implicit-Euler residual, levels 1..steps.

    Entry k-1 is the spatial measure acting at level k; the space-time mass of
    the window (t_a, t_b] is ``tau * sum of slice totals`` there, matching the
    slicewise data convention of the parabolic solvers (round trip identity).
    """
    stg = U.grid
    grid = stg.spatial
    asm = assembler_for(grid, P.p, scheme)
    w = grid.node_weights()
    interior = grid.interior_mask
    measures, remainders = [], []
    for k in range(1, stg.steps + 1):
        g = asm.grad(U.slices[k].values)
        g = g + w * (U.slices[k].values - U.slices[k - 1].values) / stg.tau
        g = np.where(interior, g, 0.0)
        measures.append(DiscreteMeasure(grid, np.maximum(g, 0.0)))
        remainders.append(GridFunction(grid, np.minimum(g, 0.0)))
    return measures, remainders


# -- mollification ----------------------------------------------------------


def _bump_kernel(grid: Grid, eps: float) -> NDArray:
    """Samples of the standard compactly supported bump on node offsets."""
    radii = [int(math.floor(eps / h - 1e-12)) for h in grid.h]
    axes = []
    for k, rk in enumerate(radii):
        offs = np.arange(-rk, rk + 1) * grid.h[k]
        axes.append(offs)
    mesh = np.meshgrid(*axes, indexing="ij") if grid.dim > 1 else [axes[0]]
    rho2 = sum(m * m for m in mesh) / (eps * eps)
    with np.errstate(divide="ignore", over="ignore"):
        k = np.where(rho2 < 1.0, np.exp(-1.0 / np.maximum(1.0 - rho2, 1e-300)), 0.0)
    if k.sum() == 0.0:  # eps below the grid spacing: identity-like kernel
        k = np.zeros([1] * grid.dim)
        k[(0,) * grid.dim] = 1.0
    return k


def mollify(mu: DiscreteMeasure, eps: float) -> GridFunction:
    """Density of the measure convolved with the radius-``eps`` standard bump.

    The kernel is normalized discretely (translation-invariant denominator),
    so total mass is preserved exactly while the eps-neighborhood of the
    support stays inside the grid; a warning reports any boundary mass loss.
    """
    if eps <= 0:
        raise ValueError("mollification radius must be positive")
    grid = mu.grid
    kernel = _bump_kernel(grid, eps)
    norm = kernel.sum() * grid.cell_volume
    out = convolve(mu.mass, kernel / norm, mode="same", method="auto")
    out = np.maximum(out, 0.0)
    density = GridFunction(grid, out)
    got = float(np.sum(out * grid.node_weights()))
    want = mu.total
    if abs(got - want) > 1e-12 * max(1.0, want):
        warnings.warn(
            f"mollification support leaks outside the grid: mass {want:.6g} -> {got:.6g}",
            RuntimeWarning,
            stacklevel=2,
        )
    return density


def mollify_function(f: GridFunction, eps: float) -> GridFunction:
    """Kernel smoothing of a nodal field (weighted, constant-preserving)."""
    if eps <= 0:
        raise ValueError("mollification radius must be positive")
    grid = f.grid
    kernel = _bump_kernel(grid, eps)
    w = grid.node_weights()
    num = convolve(f.values * w, kernel, mode="same", method="auto")
    den = convolve(w, kernel, mode="same", method="auto")
    return GridFunction(grid, num / den)


# -- Bessel-potential dual norms ---------------------------------------------


def _padded_layout(grid: Grid) -> tuple[list[int], list[slice]]:
    sizes, places = [], []
    for k, m in enumerate(grid.shape):
        n = 2 * (m - 1)
        n = max(n, m)
        start = (n - m) // 2
        sizes.append(n)
        places.append(slice(start, start + m))
    return sizes, places


def dual_norm(nu, P: PParams, q: float | None = None) -> float:
    """Bessel realization of the negative Sobolev norm of a signed functional.

    Embeds the nodal masses as a density on a zero-padded periodic box (factor
    2 per axis), applies the multiplier ``(1+|xi|^2)^{-1/2}`` by FFT, and
    returns the discrete L^q norm of the potential with q = p' by default.
    """
    f = _as_functional(nu)
    grid = f.grid
    q = P.p_conj if q is None else float(q)
    if q <= 1.0:
        raise ValueError("dual exponent must exceed 1")
    sizes, places = _padded_layout(grid)
    arr = np.zeros(sizes)
    arr[tuple(places)] = f.weights / grid.cell_volume
    spec = np.fft.fftn(arr)
    xi2 = np.zeros(sizes)
    for k, n in enumerate(sizes):
        freq = 2.0 * math.pi * np.fft.fftfreq(n, d=grid.h[k])
        shape1 = [1] * grid.dim
        shape1[k] = n
        xi2 = xi2 + (freq**2).reshape(shape1)
    g = np.fft.ifftn(spec * (1.0 + xi2) ** -0.5).real
    return float((np.sum(np.abs(g) ** q) * grid.cell_volume) ** (1.0 / q))


def parabolic_dual_norm(nu_slices, tau: float, P: PParams, q: float | None = None) -> float:
    """Slicewise spatial Bessel norm composed with the L^{p'} norm in time:
    ``(sum_k tau * dual_norm(nu_k)^{p'})^{1/p'}``."""
    if tau <= 0:
        raise ValueError("tau must be positive")
    q = P.p_conj if q is None else float(q)
    total = 0.0
    for nu in nu_slices:
        total += tau * dual_norm(nu, P, q) ** q
    return float(total ** (1.0 / q))


def dump_measure(mu: DiscreteMeasure, path):
    return dump_field(GridFunction(mu.grid, mu.mass), path, measure=True)
