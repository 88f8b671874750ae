import numpy as np
import pytest
from hypothesis import given, strategies as st

from linfmisfit.mesh import (MeshError, boundary_quadrature, build_rectangle_mesh, edge_triangle_counts,
                             signed_areas, tag_patches, volume_quadrature, write_mesh)


def test_unit_square_single_cell():
    m = build_rectangle_mesh(1, 1, 1, 1)
    assert m.n_vertices == 4 and m.n_triangles == 2
    assert len(m.boundary_edges) == 4
    assert m.domain_measure == pytest.approx(1.0, rel=1e-12)


def test_two_by_two_counts_and_perimeter():
    m = build_rectangle_mesh(2, 2, 1, 1)
    assert m.n_vertices == 9 and m.n_triangles == 8
    assert m.domain_measure == pytest.approx(1.0, rel=1e-12)
    assert m.edge_lengths.sum() == pytest.approx(4.0, rel=1e-12)


def test_rectangle_bottom_side_measure():
    m = build_rectangle_mesh(4, 2, 2, 1)
    assert m.domain_measure == pytest.approx(2.0, rel=1e-12)
    m = tag_patches(m, [("bottom", "bottom", (0, 2))])
    assert m.patch_measures["bottom"] == pytest.approx(2.0, rel=1e-12)


@pytest.mark.parametrize("nx,ny,w,h", [(0, 1, 1, 1), (1, 0, 1, 1), (2, 2, 0, 1), (2, 2, 1, -1), (1.5, 2, 1, 1)])
def test_rejects_bad_arguments(nx, ny, w, h):
    with pytest.raises(MeshError):
        build_rectangle_mesh(nx, ny, w, h)


@given(nx=st.integers(1, 12), ny=st.integers(1, 12), w=st.floats(0.1, 5), h=st.floats(0.1, 5))
def test_mesh_invariants(nx, ny, w, h):
    m = build_rectangle_mesh(nx, ny, w, h)
    assert np.all(signed_areas(m.vertices, m.triangles) > 0)
    assert m.domain_measure == pytest.approx(m.areas.sum(), rel=1e-12)
    assert m.domain_measure == pytest.approx(w * h, rel=1e-12)
    # one closed counter-clockwise loop
    e = m.boundary_edges
    assert np.array_equal(e[1:, 0], e[:-1, 1]) and e[-1, 1] == e[0, 0]
    assert len(np.unique(e[:, 0])) == len(e)
    # interior edges shared by two triangles, boundary edges by one
    counts = edge_triangle_counts(m)
    bset = {tuple(sorted(x)) for x in e.tolist()}
    for edge, c in counts.items():
        assert c == (1 if edge in bset else 2)
    assert sum(1 for c in counts.values() if c == 1) == len(e)


@given(nx=st.integers(1, 6), ny=st.integers(1, 6))
def test_refinement_keeps_measures(nx, ny):
    specs = [("B1", "bottom", (0.0, 1.0)), ("B2", "left", (0.0, 0.5))]
    a = tag_patches(build_rectangle_mesh(2 * nx, 2 * ny), specs)
    b = tag_patches(build_rectangle_mesh(4 * nx, 4 * ny), specs)
    assert b.n_triangles == 4 * a.n_triangles
    assert b.domain_measure == pytest.approx(a.domain_measure, rel=1e-12)
    for tag in ("B1", "B2"):
        assert b.patch_measures[tag] == pytest.approx(a.patch_measures[tag], rel=1e-12)


def test_patch_whole_and_half_side():
    m = tag_patches(build_rectangle_mesh(4, 4), [("B1", "bottom", (0, 1)), ("B2", "bottom", (0, 0.5))])
    assert m.patch_measures["B1"] == pytest.approx(1.0)
    assert m.patch_measures["B2"] == pytest.approx(0.5)


def test_overlapping_patches_keep_their_measures():
    m = tag_patches(build_rectangle_mesh(8, 8), [("P", "top", (0, 0.75)), ("Q", "top", (0.25, 1))])
    shared = np.intersect1d(m.patch("P").edges, m.patch("Q").edges)
    assert len(shared) == 4
    assert m.patch_measures["P"] == pytest.approx(0.75) and m.patch_measures["Q"] == pytest.approx(0.75)
    for tag in "PQ":
        p = m.patch(tag)
        assert p.measure == pytest.approx(m.edge_lengths[p.edges].sum())
        assert set(p.edges) <= set(range(len(m.boundary_edges)))


@pytest.mark.parametrize("spec", [("B", "front", (0, 1)), ("B", "top", (0.40, 0.45)), ("B", "top", (0.2, 1.5)),
                                  ("B", "top", (0.6, 0.2))])
def test_patch_errors(spec):
    with pytest.raises(MeshError):
        tag_patches(build_rectangle_mesh(4, 4), [spec])


def test_unknown_patch_tag():
    with pytest.raises(MeshError):
        build_rectangle_mesh(2, 2).patch("nope")


@pytest.mark.parametrize("order", [1, 2])
def test_volume_rule_constants_and_linears(order):
    m = build_rectangle_mesh(5, 3)
    rule = volume_quadrature(m, order)
    pts = rule.points
    assert rule.integrate(np.ones(rule.weights.shape)) == pytest.approx(1.0, rel=1e-12)
    assert rule.integrate(pts[..., 0]) == pytest.approx(0.5, rel=1e-12)


def test_volume_rule_order2_quadratics():
    m = build_rectangle_mesh(3, 3)
    rule = volume_quadrature(m, 2)
    x, y = rule.points[..., 0], rule.points[..., 1]
    assert rule.integrate(x * x) == pytest.approx(1 / 3, abs=1e-12)
    assert rule.integrate(x * y) == pytest.approx(1 / 4, abs=1e-12)


def test_boundary_rule_measures_and_cubics():
    m = tag_patches(build_rectangle_mesh(4, 4), [("B1", "bottom", (0, 1))])
    full = boundary_quadrature(m)
    assert full.integrate(np.ones(full.weights.shape)) == pytest.approx(4.0, rel=1e-12)
    r = boundary_quadrature(m, "B1")
    assert r.integrate(np.ones(r.weights.shape)) == pytest.approx(1.0, rel=1e-12)
    # 2-point Gauss integrates cubics exactly: int_0^1 x^3 = 1/4
    assert r.integrate(r.points[..., 0] ** 3) == pytest.approx(0.25, abs=1e-14)


def test_write_mesh(tmp_path):
    m = tag_patches(build_rectangle_mesh(2, 1), [("B1", "top", (0, 1))])
    write_mesh(m, tmp_path / "m.txt")
    lines = (tmp_path / "m.txt").read_text().splitlines()
    kinds = [ln.split()[0] for ln in lines if not ln.startswith("#")]
    assert kinds.count("v") == 6 and kinds.count("t") == 4 and kinds.count("e") == 6
    assert any(ln.startswith("p B1") for ln in lines)
