import math

import numpy as np
import pytest
import sympy as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from colloc import cloud as cl
from colloc.errors import IllConditionedSupportError, InsufficientSupportError
from colloc.stencils import (
    MethodSpec,
    StencilRow,
    build_dcpse,
    build_gfd,
    build_mls,
    build_rbffd,
    build_stencils,
    derivative_indices,
    verify_reproduction,
)
from colloc.weights import RbfSpec, WeightSpec

from conftest import grid_cloud, random_support_cloud

EXP = WeightSpec("exponential", alpha=1.0, epsilon=0.30)


def _rows_for(method, cloud, sup):
    """Every derivative row of one support for the given method."""
    derivs = derivative_indices(cloud.dim, 2)
    if method == "gfd":
        return build_gfd(cloud, sup)
    if method.startswith("dcpse"):
        return [build_dcpse(method, cloud, sup, EXP, target=d) for d in derivs]
    if method == "mls":
        return list(build_mls(cloud, sup).deriv_rows.values())
    return [build_rbffd(cloud, sup, RbfSpec("gaussian"), 2, target=d) for d in derivs]


# -- 1D oracles ---------------------------------------------------------------


def _gfd_1d_oracle():
    """Symbolic weighted least-squares solve of the symmetric 3-point system."""
    h, w, fl, fc, fr = sp.symbols("h w f_l f_c f_r", positive=True)
    d1, d2 = sp.symbols("d1 d2")
    resid = [(fl - fc) - (-h * d1 + h**2 / 2 * d2), (fr - fc) - (h * d1 + h**2 / 2 * d2)]
    J = sum(w * r**2 for r in resid)
    sol = sp.solve([sp.diff(J, d1), sp.diff(J, d2)], [d1, d2], dict=True)[0]
    return {k: {f: sp.simplify(sp.diff(sol[k], f)) for f in (fl, fc, fr)} for k in (d1, d2)}, h, (fl, fc, fr), (d1, d2)


def test_gfd_1d_central_differences_match_symbolic_solution():
    oracle, hs, (fl, fc, fr), (d1, d2) = _gfd_1d_oracle()
    h = 0.1
    c = cl.PointCloud(np.arange(5) * h, dim=1)
    rows = {r.deriv: r for r in build_gfd(c, cl.select_support(c, 2, 2))}
    for deriv, sym in (((1,), d1), ((2,), d2)):
        r = rows[deriv]
        expect = {k: float(v.subs(hs, h)) for k, v in oracle[sym].items()}
        assert r.coeffs[1] == pytest.approx(expect[fl], rel=1e-10)
        assert r.coeff_center == pytest.approx(expect[fc], abs=1e-10 / h**2)
        assert r.coeffs[3] == pytest.approx(expect[fr], rel=1e-10)
    assert rows[(2,)].coeff_center == pytest.approx(-2 / h**2, rel=1e-10)
    assert rows[(1,)].coeffs[3] == pytest.approx(1 / (2 * h), rel=1e-10)


@pytest.mark.parametrize("variant", ["dcpse0", "dcpse1", "dcpse2"])
def test_dcpse_1d_second_derivative_is_central_difference(variant):
    h = 0.05
    c = cl.PointCloud(np.arange(7) * h, dim=1)
    r = build_dcpse(variant, c, cl.select_support(c, 3, 2), EXP, target=(2,))
    got = [r.coeffs[2], r.coeff_center, r.coeffs[4]]
    np.testing.assert_allclose(np.array(got) * h**2, [1, -2, 1], atol=1e-10)


def test_gaussian_rbf_flat_limit_approaches_central_difference():
    h = 1.0
    c = cl.PointCloud(np.arange(3) * h, dim=1)
    sup = cl.select_support(c, 1, 2)
    errs = []
    shapes = (1e-1, 1e-2, 1e-3, 1e-4)
    for shape in shapes:
        r = build_rbffd(c, sup, RbfSpec("gaussian", c=shape), poly_degree=-1, target=(2,))
        errs.append(np.max(np.abs(np.array([r.coeffs[0], r.coeff_center, r.coeffs[2]]) * h**2
                                  - [1, -2, 1])))
    # first-order convergence in the shape parameter
    np.testing.assert_allclose(np.diff(np.log10(errs)), -1.0, atol=0.05)
    assert errs[-1] < 1e-3


# -- exactness ----------------------------------------------------------------

METHODS = ["gfd", "dcpse0", "dcpse1", "dcpse2", "mls", "rbffd"]


@pytest.mark.parametrize("method", METHODS)
@pytest.mark.parametrize("dim,k", [(2, 13), (3, 37)])
def test_quadratic_exactness_on_random_supports(method, dim, k, rng):
    for _ in range(20):
        c, sup = random_support_cloud(rng, dim, k)
        for row in _rows_for(method, c, sup):
            assert verify_reproduction(row, c, 2) <= 1e-8


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), method=st.sampled_from(METHODS))
def test_exactness_property(seed, method):
    rng = np.random.default_rng(seed)
    c, sup = random_support_cloud(rng, 2, 14)
    for row in _rows_for(method, c, sup):
        assert verify_reproduction(row, c, 2) <= 1e-8


def test_second_derivative_of_x_squared_is_two(rng):
    c, sup = random_support_cloud(rng, 2, 11)
    row = {r.deriv: r for r in build_gfd(c, sup)}[(2, 0)]
    vals = {int(i): float(x[0] ** 2) for i, x in zip(c.ids, c.x)}
    assert row.apply(vals) == pytest.approx(2.0, abs=1e-8)


@pytest.mark.parametrize("method", METHODS)
def test_scaling_coordinates_scales_rows(method, rng):
    c, sup = random_support_cloud(rng, 2, 13)
    lam = 3.7
    c2 = cl.PointCloud(c.x * lam)
    sup2 = cl.select_support(c2, 0, 13)
    for a, b in zip(_rows_for(method, c, sup), _rows_for(method, c2, sup2)):
        k = sum(a.deriv)
        assert b.coeff_center == pytest.approx(a.coeff_center * lam**-k, rel=1e-9, abs=1e-12)
        for nid, v in a.coeffs.items():
            assert b.coeffs[nid] == pytest.approx(v * lam**-k, rel=1e-9, abs=1e-9 * lam**-k)


@pytest.mark.parametrize("method", METHODS)
def test_translation_invariance(method, rng):
    c, sup = random_support_cloud(rng, 2, 13)
    c2 = cl.PointCloud(c.x + np.array([5.25, -3.5]))
    sup2 = cl.select_support(c2, 0, 13)
    for a, b in zip(_rows_for(method, c, sup), _rows_for(method, c2, sup2)):
        scale = max(abs(a.coeff_center), max(abs(v) for v in a.coeffs.values()))
        assert abs(a.coeff_center - b.coeff_center) <= 1e-12 * max(scale, 1.0) * 10
        for nid in a.coeffs:
            assert abs(a.coeffs[nid] - b.coeffs[nid]) <= 1e-12 * max(scale, 1.0) * 10


# -- method-specific checks ---------------------------------------------------


@pytest.mark.parametrize("variant", ["dcpse0", "dcpse1", "dcpse2"])
def test_dcpse_discrete_moments(variant, rng):
    c, sup = random_support_cloud(rng, 2, 13)
    for target in derivative_indices(2, 2):
        row = build_dcpse(variant, c, sup, EXP, target=target)
        ids = [row.center_id] + list(row.coeffs)
        coef = np.array([row.coeff_center] + list(row.coeffs.values()))
        rel = c.x[c.index_of(ids)] - c.x[0]
        for e in [(0, 0)] + derivative_indices(2, 2):
            moment = coef @ (rel[:, 0] ** e[0] * rel[:, 1] ** e[1])
            fact = float(math.factorial(e[0]) * math.factorial(e[1]))
            expect = fact if tuple(e) == tuple(target) else 0.0
            h = np.max(np.linalg.norm(rel, axis=1))
            assert abs(moment - expect) * h ** sum(target) <= 1e-9 * max(1.0, h ** sum(e))


def test_rbffd_linear_tail_constraints(rng):
    c, sup = random_support_cloud(rng, 2, 12)
    row = build_rbffd(c, sup, RbfSpec("gaussian"), poly_degree=1, target=(0, 1))
    for f, want in ((lambda x: x[1], 1.0), (lambda x: x[0], 0.0), (lambda x: 1.0, 0.0)):
        vals = {int(i): float(f(x)) for i, x in zip(c.ids, c.x)}
        assert row.apply(vals) == pytest.approx(want, abs=1e-9)


def test_rbffd_without_tail_is_only_reported(rng):
    c, sup = random_support_cloud(rng, 2, 12)
    row = build_rbffd(c, sup, RbfSpec("gaussian"), poly_degree=-1, target=(2, 0))
    err = verify_reproduction(row, c, 2)
    assert np.isfinite(err) and err >= 0.0


def test_mls_partition_of_unity_and_linear_reproduction(rng):
    c, sup = random_support_cloud(rng, 2, 13)
    shape = build_mls(c, sup)
    assert shape.total() == pytest.approx(1.0, abs=1e-10)
    vals = {int(i): float(3 * x[0] - 2 * x[1]) for i, x in zip(c.ids, c.x)}
    assert shape.deriv_rows[(1, 0)].apply(vals) == pytest.approx(3.0, abs=1e-8)
    assert shape.deriv_rows[(0, 1)].apply(vals) == pytest.approx(-2.0, abs=1e-8)


def test_imls_interpolates(rng):
    c, sup = random_support_cloud(rng, 2, 13)
    shape = build_mls(c, sup, interpolating=True)
    assert shape.center_value == pytest.approx(1.0, abs=1e-6)
    assert max(abs(v) for v in shape.values.values()) <= 1e-6


def test_verify_reproduction_detects_wrong_row():
    c = cl.PointCloud(np.arange(3) * 0.5, dim=1)
    bad = StencilRow(1, (2,), -2.0, {0: 1.0, 2: 1.0})  # missing 1/h^2
    assert verify_reproduction(bad, c, 2) > 0.1


# -- Voronoi-weighted rows ----------------------------------------------------


@pytest.mark.parametrize("method", ["gfd", "dcpse1"])
def test_uniform_voronoi_measures_leave_rows_unchanged(method):
    c = grid_cloud(9)
    sups = cl.select_supports(c, 13)
    spec = MethodSpec(method, weight=EXP if method != "gfd" else WeightSpec())
    plain = build_stencils(c, sups, spec)
    weighted = build_stencils(c, sups, spec, voronoi=np.full(len(c), 0.37))
    for g1, g2 in zip(plain.groups, weighted.groups):
        scale = np.max(np.abs(g1.coeffs), axis=-1, keepdims=True)
        assert np.max(np.abs(g1.coeffs - g2.coeffs) / scale) <= 1e-12


def test_nonuniform_voronoi_changes_gfd_rows():
    c = grid_cloud(9)
    sups = cl.select_supports(c, 13)
    vol = np.linspace(0.5, 1.5, len(c))
    a = build_stencils(c, sups, MethodSpec("gfd")).groups[0].coeffs
    b = build_stencils(c, sups, MethodSpec("gfd"), voronoi=vol).groups[0].coeffs
    assert np.max(np.abs(a - b)) > 1e-6


# -- failures -----------------------------------------------------------------


def test_collinear_support_is_ill_conditioned():
    x = np.stack([np.linspace(0, 1, 12), np.zeros(12)], axis=1)
    c = cl.PointCloud(x)
    with pytest.raises(IllConditionedSupportError) as info:
        build_gfd(c, cl.select_support(c, 5, 8))
    assert info.value.node_id == 5


def test_too_small_support_rejected():
    c = grid_cloud(4)
    with pytest.raises(InsufficientSupportError):
        build_gfd(c, cl.select_support(c, 5, 4))
