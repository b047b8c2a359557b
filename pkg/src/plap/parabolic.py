"""Implicit Euler marching for the p-parabolic equation and its obstacle problem.

Each step minimizes the strongly convex functional

    (1/(2 tau)) ||u - u_prev||^2_{L^2,lumped} + (1/p) int |grad u|^p - <f_k, u>

subject to the lateral boundary values (and ``u >= psi_k`` for the obstacle
variant), reusing the elliptic Newton machinery.  Slicewise data follow the
space-time measure convention: the list entry ``f[k-1]`` is the spatial
measure acting at level k, so the space-time mass it carries is
``tau * f[k-1].total``; a space-time Dirac is a single-level nodal mass 1/tau.
"""

from __future__ import annotations

import numpy as np

from .elliptic import SolverOptions, Infeasible, NonConvergence, _newton, _Problem, _projected_newton
from .grids import Grid, GridFunction, PParams, SpaceTimeFunction, SpaceTimeGrid
from .operators import Scheme

__all__ = ["step_implicit", "solve_cauchy_dirichlet", "solve_parabolic_obstacle"]


def _slice_masses(grid: Grid, f):
    if f is None:
        return None
    mass = np.asarray(getattr(f, "mass", f), dtype=float)
    if mass.shape != grid.shape:
        raise ValueError("slice data masses do not match the spatial grid")
    if np.any(mass < 0):
        raise ValueError("slice data measure must be nonnegative")
    return mass


def step_implicit(
    u_prev: GridFunction,
    tau: float,
    P: PParams,
    f_k,
    g_k: GridFunction,
    opts: SolverOptions = SolverOptions(),
    scheme: Scheme = "simplex",
    psi_k: GridFunction | None = None,
    info: dict | None = None,
) -> GridFunction:
    """One backward-Euler step: solve ``(u - u_prev)/tau - Delta_p u = f_k``
    with boundary trace ``g_k`` (and obstacle ``psi_k`` when given)."""
    if tau <= 0:
        raise ValueError("tau must be positive")
    grid = u_prev.grid
    if g_k.grid != grid:
        raise ValueError("boundary data grid mismatch")
    mass = _slice_masses(grid, f_k)
    prob = _Problem(grid, P, scheme, mass, g_k.values, uprev=u_prev.values, tau=tau)
    u = prob.start(None, scheme)
    if psi_k is None:
        u = _newton(prob, u, opts, info)
    else:
        if psi_k.grid != grid:
            raise ValueError("obstacle grid mismatch")
        bnd = np.flatnonzero(grid.boundary_mask.ravel())
        if np.any(g_k.values.reshape(-1)[bnd] < psi_k.values.reshape(-1)[bnd] - 1e-14):
            raise Infeasible("boundary values lie below the obstacle slice")
        u = _projected_newton(prob, u, psi_k.values, opts, info)
    return GridFunction(grid, u)


def _run_steps(
    stg: SpaceTimeGrid,
    P: PParams,
    f,
    pb: SpaceTimeFunction,
    opts: SolverOptions,
    scheme: Scheme,
    psi: SpaceTimeFunction | None,
) -> SpaceTimeFunction:
    if pb.grid != stg:
        raise ValueError("parabolic boundary data must live on the space-time grid")
    if f is not None and len(f) != stg.steps:
        raise ValueError(f"need one data slice per level 1..{stg.steps}")
    if psi is not None and psi.grid != stg:
        raise ValueError("obstacle must live on the space-time grid")
    out = [pb.slices[0]]
    if psi is not None:
        v0 = out[0].values
        if np.any(v0 < psi.slices[0].values - 1e-14):
            raise Infeasible("initial slice lies below the obstacle")
    for k in range(1, stg.steps + 1):
        f_k = f[k - 1] if f is not None else None
        psi_k = psi.slices[k] if psi is not None else None
        try:
            u_k = step_implicit(
                out[-1], stg.tau, P, f_k, pb.slices[k], opts, scheme, psi_k=psi_k
            )
        except NonConvergence as exc:
            raise NonConvergence(exc.iterations, exc.residual) from RuntimeError(
                f"time level {k} failed"
            )
        out.append(u_k)
    return SpaceTimeFunction(stg, out)


def solve_cauchy_dirichlet(
    stg: SpaceTimeGrid,
    P: PParams,
    f,
    pb: SpaceTimeFunction,
    opts: SolverOptions = SolverOptions(),
    scheme: Scheme = "simplex",
) -> SpaceTimeFunction:
    """March ``steps`` implicit-Euler levels.

    ``pb`` supplies the initial slice (level 0) and the lateral boundary trace
    of every later level; its interior values at levels >= 1 are ignored.
    ``f`` is None or a list of ``steps`` nonnegative slice measures.
    """
    return _run_steps(stg, P, f, pb, opts, scheme, None)


def solve_parabolic_obstacle(
    stg: SpaceTimeGrid,
    P: PParams,
    psi: SpaceTimeFunction,
    pb: SpaceTimeFunction,
    opts: SolverOptions = SolverOptions(),
    scheme: Scheme = "simplex",
) -> SpaceTimeFunction:
    """Per-level constrained implicit Euler: every level minimizes the step
    functional subject to ``u >= psi(., t_k)``; data-free as in the elliptic
    obstacle problem."""
    return _run_steps(stg, P, None, pb, opts, scheme, psi)
