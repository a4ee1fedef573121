import math

import numpy as np
import pytest

from lens_torsion import geometry as geo
from lens_torsion.mesh import (LINE_W, TRI_W, MeshError, boundary_integral, refine, refined, triangulate,
                               triangulate_polygon, volume_integral)

SQRT2 = math.sqrt(2.0)
LENS_AREA = math.pi / 2 - 1
# int x_2 over the R = 1 lens, sqrt2 (pi/4 - 1/2), independent closed form
LENS_MOMENT = SQRT2 * (math.pi / 4 - 0.5)


@pytest.fixture(scope="module")
def lens():
    return geo.make_symmetric_cap(2, 1.0)


@pytest.fixture(scope="module")
def meshes(lens):
    return refined(triangulate(lens, 0.1), 2)


def test_quadrature_weights_normalised():
    assert TRI_W.sum() == pytest.approx(1.0, abs=1e-14)
    assert LINE_W.sum() == pytest.approx(1.0, abs=1e-15)


def test_volume_rule_exact_for_quartics():
    square = triangulate_polygon(geo.polygon_polyline([(0, 0), (1, 0), (1, 1), (0, 1)]), 0.5)
    val = volume_integral(square, lambda p: p[:, 0] ** 4 + p[:, 0] ** 2 * p[:, 1] ** 2)
    assert val == pytest.approx(1 / 5 + 1 / 9, abs=1e-13)


def test_boundary_rule_exact_for_quintics():
    square = triangulate_polygon(geo.polygon_polyline([(0, 0), (1, 0), (1, 1), (0, 1)]), 0.5)
    # bottom edge contributes int_0^1 x^5 = 1/6, right edge x = 1 contributes 1, top x^5 again 1/6
    val = boundary_integral(square, None, lambda p, n: p[:, 0] ** 5)
    assert val == pytest.approx(1 / 6 + 1 + 1 / 6, abs=1e-13)


def test_lens_area_converges(meshes):
    errs = [abs(m.areas.sum() - LENS_AREA) for m in meshes]
    assert errs[-1] < 2e-4
    assert errs[0] / errs[1] > 3.5 and errs[1] / errs[2] > 3.5


def test_lens_moment(meshes):
    assert volume_integral(meshes[-1], lambda p: p[:, 1]) == pytest.approx(LENS_MOMENT, abs=2e-4)


def test_triangles_positive_and_well_shaped(meshes):
    for m in meshes:
        assert (m.areas > 0).all()
        # red refinement keeps the angles of the parent mesh up to boundary snapping
        assert m.min_angle > 20.0


def test_refinement_halves_h(meshes):
    h = [m.h for m in meshes]
    assert h[0] <= 0.1 * 1.5  # area bound allows edges somewhat above h_target
    assert 0.45 < h[1] / h[0] < 0.55 and 0.45 < h[2] / h[1] < 0.55


def test_boundary_vertices_on_curves(lens, meshes):
    m = meshes[-1]
    for tag, dist in ((geo.SIGMA, lambda v: np.linalg.norm(v - lens.z0, axis=1) - 1.0),
                      (geo.T_ARC, lambda v: np.linalg.norm(v, axis=1) - 1.0)):
        ids = np.unique(m.boundary_edges[m.edge_tags == tag])
        assert np.abs(dist(m.vertices[ids])).max() < 1e-12


def test_boundary_orientation(meshes):
    m = meshes[0]
    # outward normals: the enclosed area from the divergence theorem is positive
    area = boundary_integral(m, None, lambda p, n: 0.5 * np.einsum("ij,ij->i", p, n))
    assert area == pytest.approx(m.areas.sum(), rel=1e-12)


def test_two_interface_vertices(meshes):
    for m in meshes:
        assert len(m.lambda_vertices) == 2
        assert np.allclose(np.abs(m.vertices[m.lambda_vertices]), 1 / SQRT2, atol=1e-12)


def test_delta_zero_on_boundary(meshes):
    m = meshes[0]
    assert np.abs(m.delta[np.unique(m.boundary_edges)]).max() < 1e-12
    assert m.delta.max() < 0.5 * (2 - SQRT2) + 1e-3


def test_refine_is_deterministic(meshes):
    again = refine(meshes[0])
    assert np.array_equal(again.vertices, meshes[1].vertices)
    assert np.array_equal(again.triangles, meshes[1].triangles)


def test_mesh_text_header(meshes):
    text = meshes[0].to_text().splitlines()
    assert text[0] == f"VERTICES {meshes[0].n_vertices}"
    assert f"TRIANGLES {meshes[0].n_triangles}" in text


def test_thin_lens_rejected():
    thin = geo.make_symmetric_cap(2, 0.1)
    with pytest.raises(MeshError):
        triangulate(thin, 0.1)


def test_three_dimensional_rejected():
    with pytest.raises(MeshError):
        triangulate(geo.make_symmetric_cap(3, 1.0), 0.1)


def test_nonpositive_h_rejected(lens):
    with pytest.raises(MeshError):
        triangulate(lens, 0.0)
