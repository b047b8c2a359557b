import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from plap.grids import (
    Box,
    Cylinder,
    Grid,
    GridFunction,
    PParams,
    SpaceTimeFunction,
    SpaceTimeGrid,
    dump_field,
    gradient,
    load_field,
    lr_norm,
    parabolic_sobolev_norm,
    w1q_norm,
)


def test_pparams_conjugate_identity():
    P = PParams(3.0)
    assert P.p_conj == pytest.approx(1.5, abs=0)
    assert 1.0 / P.p + 1.0 / P.p_conj == pytest.approx(1.0, abs=1e-15)


@pytest.mark.parametrize("p", [2.0, 1.0, -3.0, float("inf"), float("nan")])
def test_pparams_rejects_bad_exponents(p):
    with pytest.raises(ValueError):
        PParams(p)


def test_grid_invariants():
    g = Grid([(0, 1), (-2, 2)], (5, 9))
    assert g.dim == 2
    assert g.h == (0.25, 0.5)
    assert all(h > 0 for h in g.h)
    # node coordinates reproducible exactly from (extent, shape)
    assert g.axis_coords(0)[0] == 0.0 and g.axis_coords(0)[-1] == 1.0
    assert np.array_equal(g.axis_coords(1), Grid([(0, 1), (-2, 2)], (5, 9)).axis_coords(1))
    with pytest.raises(ValueError):
        Grid([(0, 1)], (1,))
    with pytest.raises(ValueError):
        Grid([(1, 1)], (4,))


def test_gridfunction_arithmetic_requires_same_grid():
    g1 = Grid([(0, 1)], (5,))
    g2 = Grid([(0, 2)], (5,))
    f1, f2 = g1.full(1.0), g2.full(1.0)
    with pytest.raises(ValueError):
        f1 + f2
    with pytest.raises(ValueError):
        f1.minimum(f2)
    assert np.all((f1 * 3.0).values == 3.0)


def test_gridfunction_values_immutable():
    f = Grid([(0, 1)], (4,)).zeros()
    with pytest.raises(ValueError):
        f.values[0] = 1.0


def test_lr_norm_zero_and_unit():
    g = Grid([(0, 1), (0, 1)], (17, 17))
    assert lr_norm(g.zeros(), 2.0) == 0.0
    # trapezoid weights integrate the constant exactly on the unit square
    assert lr_norm(g.full(1.0), 2.0) == pytest.approx(1.0, abs=1e-13)


def test_lr_norm_rejects_bad_input():
    g = Grid([(0, 1)], (9,))
    with pytest.raises(ValueError):
        lr_norm(g.full(1.0), 0.5)
    f = GridFunction(g, np.r_[np.inf, np.ones(8)])
    with pytest.raises(ValueError):
        lr_norm(f, 2.0)
    # the non-finite node outside the subdomain is fine
    assert lr_norm(f, 2.0, Box((0.5,), (1.0,))) > 0


def test_lr_norm_radial_singularity_against_quadrature_oracle():
    # f = |x|^{-1/2} on [-1,1]^2 with the origin node punctured, r = 3.
    # Oracle: integrate r^{-3/2} over the square by the radial arc-length
    # formula (full circles to r=1, clipped arcs to sqrt(2)).
    def arc(r):
        return 2 * math.pi * r if r <= 1.0 else (2 * math.pi - 8 * math.acos(1.0 / r)) * r

    oracle_int, _ = quad(lambda r: arc(r) * r**-1.5, 0, math.sqrt(2), points=[1.0], limit=200)
    oracle = oracle_int ** (1.0 / 3.0)
    g = Grid([(-1, 1), (-1, 1)], (513, 513))
    X, Y = g.coords()
    r = np.hypot(X, Y)
    vals = np.zeros(g.shape)
    mask = r > 0
    vals[mask] = r[mask] ** -0.5
    got = lr_norm(GridFunction(g, vals), 3.0)
    assert got == pytest.approx(oracle, rel=0.02)


def test_gradient_affine_exact():
    # exact up to the rounding of sampling the affine data at the nodes
    g = Grid([(0, 1), (0, 1)], (13, 17))
    f = g.sample(lambda x, y: 3.0 * x - 2.0 * y)
    gr = gradient(f)
    assert np.allclose(gr[..., 0], 3.0, atol=1e-12, rtol=0)
    assert np.allclose(gr[..., 1], -2.0, atol=1e-12, rtol=0)
    assert np.all(gradient(g.full(4.0)) == 0.0)


def test_gradient_1d_midpoint_derivative():
    # hand-computed difference quotients of x^2: slope on cell k is 2*x_mid
    g = Grid([(0, 1)], (11,))
    f = g.sample(lambda x: x * x)
    gr = gradient(f)[0][:, 0]
    x = g.axis_coords(0)
    mids = 0.5 * (x[:-1] + x[1:])
    assert np.allclose(gr, 2.0 * mids, atol=1e-14)


def test_gradient_linearity_exact(rng):
    g = Grid([(0, 1), (0, 2)], (7, 9))
    a = GridFunction(g, rng.standard_normal(g.shape))
    b = GridFunction(g, rng.standard_normal(g.shape))
    lhs = gradient(GridFunction(g, 2.0 * a.values + b.values))
    rhs = 2.0 * gradient(a) + gradient(b)
    assert np.allclose(lhs, rhs, atol=1e-12)


def test_w1q_norm_affine_closed_form():
    # ||x||_{L^2([0,1]^2)} + ||grad x|| = 1/sqrt(3) + 1
    g = Grid([(0, 1), (0, 1)], (65, 65))
    f = g.sample(lambda x, y: x)
    exact = 1.0 / math.sqrt(3.0) + 1.0
    assert w1q_norm(f, 2.0) == pytest.approx(exact, abs=g.h[0])
    assert w1q_norm(g.zeros(), 2.0) == 0.0


@given(alpha=st.floats(min_value=0.01, max_value=100.0), seed=st.integers(0, 2**31 - 1))
@settings(max_examples=25, deadline=None)
def test_norm_homogeneity_and_triangle(alpha, seed):
    rng = np.random.default_rng(seed)
    g = Grid([(0, 1), (0, 1)], (9, 9))
    a = GridFunction(g, rng.standard_normal(g.shape))
    b = GridFunction(g, rng.standard_normal(g.shape))
    for norm in (lambda f: lr_norm(f, 3.0), lambda f: w1q_norm(f, 2.5)):
        assert norm(a * alpha) == pytest.approx(alpha * norm(a), rel=1e-12)
        assert norm(a + b) <= norm(a) + norm(b) + 1e-12


def test_lr_norm_refinement_cauchy():
    vals = []
    hs = []
    for m in (17, 33, 65, 129):
        g = Grid([(0, 1)], (m,))
        vals.append(lr_norm(g.sample(lambda x: np.sin(3 * x) + 2), 2.0))
        hs.append(g.h[0])
    diffs = np.abs(np.diff(vals))
    c = diffs[0] / hs[0]
    assert np.all(diffs <= 1.5 * c * np.array(hs[:-1]))


def test_parabolic_sobolev_norm_values():
    g = Grid([(0, 1)], (33,))
    stg = SpaceTimeGrid(g, 0.0, 1.0, 128)
    zero = SpaceTimeFunction(stg, [g.zeros()] * (stg.steps + 1))
    assert parabolic_sobolev_norm(zero, 2.0) == 0.0
    one = SpaceTimeFunction(stg, [g.full(1.0)] * (stg.steps + 1))
    assert parabolic_sobolev_norm(one, 2.0) == pytest.approx(1.0, abs=1e-12)
    # F(x,t) = t*x: closed form of int (t^2 x^2 + t^2) = 1/9 + 1/3
    F = SpaceTimeFunction.sample(stg, lambda x, t: t * x)
    exact = math.sqrt(1.0 / 9.0 + 1.0 / 3.0)
    assert parabolic_sobolev_norm(F, 2.0) == pytest.approx(exact, rel=0.02)


def test_subdomain_snaps_outward():
    g = Grid([(0, 1)], (11,))  # h = 0.1
    sl = g.snap(Box((0.31,), (0.69,)))
    assert g.axis_coords(0)[sl[0].start] <= 0.31
    assert g.axis_coords(0)[sl[0].stop - 1] >= 0.69
    with pytest.raises(ValueError):
        g.snap(Box((-0.5,), (0.5,)))


def test_spacetime_grid_time_levels():
    stg = SpaceTimeGrid(Grid([(0, 1)], (5,)), 0.5, 1.5, 4)
    assert stg.tau == pytest.approx(0.25)
    assert stg.time(3) == pytest.approx(1.25)
    with pytest.raises(ValueError):
        SpaceTimeGrid(Grid([(0, 1)], (5,)), 1.0, 0.5, 4)


def test_field_dump_roundtrip(tmp_path, rng):
    g = Grid([(-1, 2), (0, 1)], (9, 6))
    f = GridFunction(g, rng.standard_normal(g.shape))
    path = dump_field(f, tmp_path / "f.field")
    back = load_field(path)
    assert back.grid == g
    assert np.array_equal(back.values, f.values)  # bit identical
    raw = path.read_bytes().split(b"\n", 1)
    assert b'"dim": 2' in raw[0]
