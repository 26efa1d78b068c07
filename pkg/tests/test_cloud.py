import math

import numpy as np
import pytest
import shapely
from hypothesis import given, settings
from hypothesis import strategies as st

from colloc import cloud as cl
from colloc.errors import CloudFormatError, ConfigError, InsufficientSupportError, SolverIOError
from colloc.stencils import MethodSpec, build_stencils
from colloc.weights import WeightSpec, eval_weight

from conftest import grid_cloud

# -- generators ---------------------------------------------------------------


def test_annulus_corner_only_grid():
    c = cl.generate_annulus_quarter(1.0, 2.0, 1, 1)
    got = sorted(map(tuple, np.round(c.x, 15)))
    assert got == [(0.0, 1.0), (0.0, 2.0), (1.0, 0.0), (2.0, 0.0)]


def test_annulus_count_and_spacing():
    c = cl.generate_annulus_quarter(1.0, 2.0, 40, 40)
    assert len(c) == 41 * 41
    assert c.min_spacing() > 0


def test_annulus_inner_rim_normals_point_toward_axis():
    c = cl.generate_annulus_quarter(1.0, 2.0, 6, 9)
    r = np.linalg.norm(c.x, axis=1)
    inner = np.isclose(r, 1.0)
    np.testing.assert_allclose(c.normal[inner], -c.x[inner] / r[inner, None], atol=1e-15)


def test_annulus_roles():
    c = cl.generate_annulus_quarter(1.0, 2.0, 4, 6)
    r = np.linalg.norm(c.x, axis=1)
    on_edge = np.isclose(c.x[:, 0], 0) | np.isclose(c.x[:, 1], 0)
    rim = np.isclose(r, 1.0) | np.isclose(r, 2.0)
    assert np.all(c.role[on_edge] == cl.DIRICHLET)
    assert np.all(c.role[rim & ~on_edge] == cl.NEUMANN)
    assert np.all(c.role[~rim & ~on_edge] == cl.INTERIOR)


@pytest.mark.parametrize("args", [(2.0, 1.0, 4, 4), (0.0, 1.0, 4, 4), (1.0, 2.0, 0, 4)])
def test_annulus_rejects_bad_input(args):
    with pytest.raises(ConfigError):
        cl.generate_annulus_quarter(*args)


def test_lshape_unit_cells():
    c = cl.generate_lshape(1.0, 1.0)
    assert len(c) == 8
    corner = np.flatnonzero(np.all(c.x == 0.0, axis=1))
    assert len(corner) == 1
    assert c.role[corner[0]] == cl.NEUMANN and c.singular[corner[0]]


def test_lshape_census_against_polygon_membership():
    L, m = 2.0, 64
    c = cl.generate_lshape(L, L / m)
    g = np.linspace(-L, L, 2 * m + 1)
    X, Y = np.meshgrid(g, g, indexing="ij")
    poly = shapely.Polygon(cl.lshape_polygon(L))
    inside = shapely.covers(poly, shapely.points(X.ravel(), Y.ravel()))
    assert len(c) == int(inside.sum()) == 12545


def test_lshape_rejects_non_dividing_spacing():
    with pytest.raises(ConfigError):
        cl.generate_lshape(1.0, 0.3)


def test_sphere_containment_and_octant():
    Ri, Ro = 1.0, 2.0
    c = cl.generate_sphere_eighth(Ri, Ro, 0.25)
    r = np.linalg.norm(c.x, axis=1)
    assert np.all((r >= Ri - 1e-12) & (r <= Ro + 1e-12))
    assert np.all(c.x >= -1e-15)
    # reflection across a plane stays on it or leaves the octant
    for axis in range(3):
        refl = c.x.copy()
        refl[:, axis] *= -1
        assert np.all((np.abs(c.x[:, axis]) < 1e-15) | np.any(refl < 0, axis=1))


def test_coarse_sphere_supports_3d_stencils():
    c = cl.generate_sphere_eighth(1.0, 2.0, 0.5)
    sups = cl.select_supports(c, 37)
    assert all(len(s) == 37 for s in sups)
    st = build_stencils(c, sups, MethodSpec("gfd"))
    assert sum(len(g.rows) for g in st.groups) == len(c)


def test_sphere_rejects_coarse_spacing():
    with pytest.raises(ConfigError):
        cl.generate_sphere_eighth(1.0, 2.0, 3.0)


@pytest.mark.parametrize("cloud", [
    cl.generate_annulus_quarter(1.0, 2.0, 7, 13),
    cl.generate_lshape(1.0, 0.125),
    cl.generate_sphere_eighth(1.0, 2.0, 0.3),
], ids=["annulus", "lshape", "sphere"])
def test_generated_normals_are_unit(cloud):
    nrm = np.linalg.norm(cloud.normal[cloud.boundary], axis=1)
    assert np.max(np.abs(nrm - 1.0)) <= 1e-12


# -- node files ---------------------------------------------------------------


def test_empty_file_gives_empty_cloud(tmp_path):
    p = tmp_path / "empty.nodes"
    p.write_text("# nothing\n")
    assert len(cl.load_cloud(p)) == 0


def test_three_node_file_keeps_ids(tmp_path):
    p = tmp_path / "three.nodes"
    p.write_text("7 0 0 I\n3 1 0 N 1 0 0 0\n5 0 1 D -1 0 0 * 0 0\n")
    c = cl.load_cloud(p)
    assert sorted(c.ids.tolist()) == [3, 5, 7]
    n5 = c.node(int(c.index_of([5])[0]))
    assert n5.role == cl.DIRICHLET and n5.bc_value == (0.0, None)


def test_round_trip_is_bit_exact(tmp_path):
    rng = np.random.default_rng(0)
    c = cl.generate_annulus_quarter(1.0, 2.0, 5, 9)
    x = c.x.copy()
    inner = c.role == cl.INTERIOR
    x[inner] += rng.uniform(-1e-3, 1e-3, size=(int(inner.sum()), 2))
    c = cl.PointCloud(x, role=c.role, normal=c.normal, disp=c.disp, traction=c.traction, ids=c.ids)
    p1, p2 = tmp_path / "a.nodes", tmp_path / "b.nodes"
    cl.save_cloud(c, p1)
    d = cl.load_cloud(p1)
    assert np.array_equal(d.x, c.x)
    assert np.array_equal(d.normal, c.normal, equal_nan=True)
    cl.save_cloud(d, p2)
    assert p1.read_text() == p2.read_text()


@pytest.mark.parametrize("text,line", [
    ("0 0 0 I\nfoo 1 1 I\n", 2),
    ("0 0 0 I\n0 1 1 I\n", 2),
    ("0 0 0 I\n1 1 N 1 0\n", 2),
    ("0 0 0 N 0.5 0.5\n", 1),
    ("0 0 0 I\n1 1 1 0 I\n", 2),
])
def test_malformed_lines_report_line_number(text, line):
    with pytest.raises(CloudFormatError) as info:
        cl.parse_cloud(text.splitlines())
    assert info.value.line == line


def test_missing_file_is_io_error(tmp_path):
    with pytest.raises(SolverIOError):
        cl.load_cloud(tmp_path / "nope.nodes")


def test_duplicate_ids_and_points_rejected():
    with pytest.raises(ConfigError):
        cl.PointCloud([[0, 0], [1, 0]], ids=[4, 4])
    with pytest.raises(ConfigError):
        cl.PointCloud([[0, 0], [0, 0]])


# -- supports -----------------------------------------------------------------


def test_1d_interior_support():
    h = 0.1
    c = cl.PointCloud(np.arange(11) * h, dim=1)
    s = cl.select_support(c, 5, 2)
    assert sorted(s.member_ids.tolist()) == [4, 6]
    assert s.radius == pytest.approx(1.0001 * h, rel=1e-12)


def test_tie_broken_by_ascending_id():
    # four neighbors at distance 1; k = 2 takes the two smallest ids
    x = [[0, 0], [1, 0], [0, 1], [-1, 0], [0, -1]]
    c = cl.PointCloud(x, ids=[0, 40, 10, 30, 20])
    s = cl.select_support(c, 0, 2)
    assert s.member_ids.tolist() == [10, 20]


def test_insufficient_candidates():
    c = cl.PointCloud([[0, 0], [1, 0], [0, 1]])
    with pytest.raises(InsufficientSupportError):
        cl.select_support(c, 0, 3)


def test_cylinder_interior_supports_have_k_members():
    c = cl.generate_annulus_quarter(1.0, 2.0, 33, 157)
    sups = cl.select_supports(c, 11, 19)
    inner = ~c.boundary
    assert all(len(s) == 11 for s, i in zip(sups, inner) if i)
    assert all(np.all(s.effective_distance < s.radius) for s in sups)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000), k=st.integers(1, 12))
def test_support_independent_of_insertion_order(seed, k):
    rng = np.random.default_rng(seed)
    # integer lattice points produce many exact distance ties
    pts = np.unique(rng.integers(0, 6, size=(30, 2)), axis=0).astype(float)
    if len(pts) <= k:
        return
    ids = np.arange(len(pts))
    perm = rng.permutation(len(pts))
    a = cl.PointCloud(pts, ids=ids)
    b = cl.PointCloud(pts[perm], ids=ids[perm])
    for nid in ids:
        sa, sb = cl.select_support(a, nid, k), cl.select_support(b, nid, k)
        assert sa.member_ids.tolist() == sb.member_ids.tolist()
        assert sa.radius == sb.radius


# -- visibility and diffraction -----------------------------------------------


def _lshape_pair(eps=0.1):
    x = np.array([[2 * eps, -eps], [-eps, 2 * eps], [-eps, -eps]])
    c = cl.PointCloud(x)
    sup = cl.Support(0, np.array([1, 2]), np.linalg.norm(x[1:] - x[0], axis=1), 1.0)
    return c, sup


def test_visibility_removes_member_behind_reentrant_corner():
    c, sup = _lshape_pair()
    seg = np.array([[[0.0, 0.0], [1.0, 0.0]], [[0.0, 0.0], [0.0, 1.0]]])
    line = shapely.LineString(c.x[[0, 1]])
    face = shapely.LineString(seg[0])
    assert line.crosses(face)  # independent oracle
    out = cl.apply_visibility(sup, c, seg)
    assert out.member_ids.tolist() == [2]


def test_visibility_keeps_line_grazing_the_corner():
    eps = 0.1
    x = np.array([[eps, -eps], [-eps, eps]])
    c = cl.PointCloud(x)
    sup = cl.Support(0, np.array([1]), np.array([2 * math.sqrt(2) * eps]), 1.0)
    seg = np.array([[[0.0, 0.0], [1.0, 0.0]], [[0.0, 0.0], [0.0, 1.0]]])
    assert cl.apply_visibility(sup, c, seg).member_ids.tolist() == [1]


def test_visibility_below_minimum_raises():
    c, sup = _lshape_pair()
    seg = np.array([[[0.0, 0.0], [1.0, 0.0]], [[0.0, 0.0], [0.0, 1.0]]])
    with pytest.raises(InsufficientSupportError):
        cl.apply_visibility(sup, c, seg, min_members=2)


def test_visibility_identity_on_convex_domain():
    c = grid_cloud(7)
    seg = cl.polygon_segments(np.array([[0, 0], [0.75, 0], [0.75, 0.75], [0, 0.75]], float))
    for s in cl.select_supports(c, 12):
        out = cl.apply_visibility(s, c, seg)
        assert out.member_ids.tolist() == s.member_ids.tolist()


def test_diffraction_leaves_visible_members_alone():
    c = grid_cloud(5)
    seg = np.array([[[10.0, 10.0], [11.0, 10.0]]])
    s = cl.select_support(c, 12, 8)
    out = cl.apply_diffraction(s, c, np.array([10.0, 10.0]), seg)
    np.testing.assert_array_equal(out.effective_distance, s.effective_distance)


def test_diffraction_path_length_rule():
    eps = 0.1
    seg = np.array([[[0.0, 0.0], [1.0, 0.0]], [[0.0, 0.0], [0.0, 1.0]]])
    c, sup = _lshape_pair(eps)
    path = math.hypot(-eps, 2 * eps) + math.hypot(2 * eps, -eps)
    far = cl.Support(0, sup.member_ids, sup.effective_distance, radius=0.99 * path)
    assert 1 not in cl.apply_diffraction(far, c, np.zeros(2), seg).member_ids.tolist()
    near = cl.Support(0, sup.member_ids, sup.effective_distance, radius=1.5 * path)
    out = cl.apply_diffraction(near, c, np.zeros(2), seg)
    pos = out.member_ids.tolist().index(1)
    assert out.effective_distance[pos] == pytest.approx(path, rel=1e-14)
    w = WeightSpec("spline3")
    before = eval_weight(w, sup.effective_distance[0] / near.radius)
    after = eval_weight(w, out.effective_distance[pos] / near.radius)
    assert after < before


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_diffraction_never_shortens_distances(seed):
    c = cl.generate_lshape(1.0, 0.125)
    rng = np.random.default_rng(seed)
    seg = np.array([[[0.0, 0.0], [1.0, 0.0]], [[0.0, 0.0], [0.0, 1.0]]])
    for i in rng.choice(len(c), 10, replace=False):
        s = cl.select_support(c, int(c.ids[i]), 12)
        out = cl.apply_diffraction(s, c, np.zeros(2), seg, domain_polygon=cl.lshape_polygon(1.0))
        orig = dict(zip(s.member_ids.tolist(), s.effective_distance))
        for nid, d in zip(out.member_ids.tolist(), out.effective_distance):
            assert d >= orig[nid]


# -- Voronoi ------------------------------------------------------------------

SQUARE = np.array([[0, 0], [1, 0], [1, 1], [0, 1]], float)


def test_single_node_cell_is_domain():
    assert cl.voronoi_volumes(cl.PointCloud([[0.3, 0.6]]), SQUARE)[0] == pytest.approx(1.0)


def test_two_node_cells_split_evenly():
    vol = cl.voronoi_volumes(cl.PointCloud([[0.25, 0.5], [0.75, 0.5]]), SQUARE)
    np.testing.assert_allclose(vol, [0.5, 0.5], rtol=1e-12)


def test_node_outside_polygon_rejected():
    with pytest.raises(ConfigError):
        cl.voronoi_volumes(cl.PointCloud([[0.5, 0.5], [1.5, 0.5]]), SQUARE)


def test_voronoi_measures_carry_ids():
    ms = cl.voronoi_measures(cl.PointCloud([[0.25, 0.5], [0.75, 0.5]], ids=[8, 9]), SQUARE)
    assert [m.node_id for m in ms] == [8, 9]
    assert all(m.measure > 0 for m in ms)


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), n=st.integers(2, 60))
def test_voronoi_partition_of_square(seed, n):
    pts = np.random.default_rng(seed).uniform(0, 1, size=(n, 2))
    gap = np.linalg.norm(pts[:, None] - pts[None], axis=-1) + np.eye(n)
    if gap.min() < 1e-9:
        return
    vol = cl.voronoi_volumes(cl.PointCloud(pts), SQUARE)
    assert abs(vol.sum() - 1.0) <= 1e-6
    assert np.all(vol > 0)


def test_voronoi_partition_of_lshape():
    c = cl.generate_lshape(1.0, 0.1)
    vol = cl.voronoi_volumes(c, cl.lshape_polygon(1.0))
    assert vol.sum() == pytest.approx(3.0, rel=1e-6)


def test_voronoi_3d_box():
    pts = np.random.default_rng(1).uniform(0, 1, size=(40, 3))
    pts = np.vstack([pts, [[0, 0, 0], [1, 1, 1]]])
    vol = cl.voronoi_volumes(cl.PointCloud(pts))
    assert vol.sum() == pytest.approx(1.0, rel=1e-6)
