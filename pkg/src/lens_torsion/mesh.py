"""Triangulation of lens domains, red refinement and quadrature."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import triangle as tr

from .geometry import (
    SIGMA,
    T_ARC,
    TAG_NAMES,
    BoundaryPolyline,
    DomainSpec,
    lens_polyline,
    segment_distances,
)


class MeshError(ValueError):
    pass


# degree-4 symmetric rule (Dunavant), barycentric points and weights summing to 1
_A1, _W1 = 0.445948490915965, 0.223381589678011
_A2, _W2 = 0.091576213509771, 0.109951743655322
TRI_BARY = np.array([
    [1 - 2 * _A1, _A1, _A1], [_A1, 1 - 2 * _A1, _A1], [_A1, _A1, 1 - 2 * _A1],
    [1 - 2 * _A2, _A2, _A2], [_A2, 1 - 2 * _A2, _A2], [_A2, _A2, 1 - 2 * _A2],
])
TRI_W = np.array([_W1] * 3 + [_W2] * 3)

_gl_x, _gl_w = np.polynomial.legendre.leggauss(3)
LINE_S = 0.5 * (_gl_x + 1.0)  # parameter on [0, 1]
LINE_W = 0.5 * _gl_w


def fsum(values) -> float:
    """Order-independent, correctly rounded sum."""
    return math.fsum(np.ravel(values).tolist())


@dataclass
class Mesh:
    vertices: np.ndarray
    triangles: np.ndarray
    boundary_edges: np.ndarray  # oriented so the domain lies on the left
    edge_tags: np.ndarray
    edge_params: np.ndarray  # curve parameter of both endpoints (nan for fixtures)
    lambda_vertices: np.ndarray
    delta: np.ndarray
    fine: BoundaryPolyline
    spec: DomainSpec | None = None

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    def corners(self) -> np.ndarray:
        return self.vertices[self.triangles]

    @property
    def areas(self) -> np.ndarray:
        p = self.corners()
        d1, d2 = p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    @property
    def h(self) -> float:
        p = self.corners()
        return float(max(np.linalg.norm(p[:, i] - p[:, (i + 1) % 3], axis=1).max() for i in range(3)))

    @property
    def min_angle(self) -> float:
        """Smallest interior angle in degrees."""
        p = self.corners()
        worst = np.inf
        for i in range(3):
            u = p[:, (i + 1) % 3] - p[:, i]
            v = p[:, (i + 2) % 3] - p[:, i]
            c = np.einsum("ij,ij->i", u, v) / (np.linalg.norm(u, axis=1) * np.linalg.norm(v, axis=1))
            worst = min(worst, float(np.degrees(np.arccos(np.clip(c, -1, 1))).min()))
        return worst

    def edge_normals(self, tag: int | None = None) -> np.ndarray:
        e = self.boundary_edges if tag is None else self.boundary_edges[self.edge_tags == tag]
        d = self.vertices[e[:, 1]] - self.vertices[e[:, 0]]
        return np.stack([d[:, 1], -d[:, 0]], axis=1) / np.linalg.norm(d, axis=1)[:, None]

    def to_text(self) -> str:
        out = [f"VERTICES {self.n_vertices}"]
        out += [f"{i} {x:.17g} {y:.17g} {d:.17g}" for i, ((x, y), d) in enumerate(zip(self.vertices, self.delta))]
        out.append(f"TRIANGLES {self.n_triangles}")
        out += [f"{a} {b} {c}" for a, b, c in self.triangles]
        out.append(f"BOUNDARY {len(self.boundary_edges)}")
        out += [f"{a} {b} {TAG_NAMES[int(t)]}" for (a, b), t in zip(self.boundary_edges, self.edge_tags)]
        return "\n".join(out) + "\n"

    def vertices_csv(self) -> str:
        rows = ["id,x1,x2,delta"]
        rows += [f"{i},{x:.17g},{y:.17g},{d:.17g}" for i, ((x, y), d) in enumerate(zip(self.vertices, self.delta))]
        return "\n".join(rows) + "\n"

    def triangles_csv(self) -> str:
        return "a,b,c\n" + "".join(f"{a},{b},{c}\n" for a, b, c in self.triangles)


def unique_edges(triangles: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Sorted vertex pairs of all edges and, per triangle, the ids of its
    edges (v0,v1), (v1,v2), (v2,v0)."""
    t = np.asarray(triangles)
    local = np.stack([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]], axis=1)  # (T, 3, 2)
    flat = np.sort(local.reshape(-1, 2), axis=1)
    edges, inv = np.unique(flat, axis=0, return_inverse=True)
    return edges, inv.reshape(-1, 3)


def fine_polyline(spec: DomainSpec, n: int = 1024) -> BoundaryPolyline:
    ls, lt = spec.sigma_length(), spec.t_length()
    ns = max(8, int(round(n * ls / (ls + lt))))
    return lens_polyline(spec, ns, max(8, n - ns))


def _from_triangle(out: dict) -> tuple[np.ndarray, np.ndarray]:
    v = np.asarray(out["vertices"], dtype=float)
    t = np.asarray(out["triangles"], dtype=np.int64)
    p = v[t]
    area = (p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1]) - (p[:, 1, 1] - p[:, 0, 1]) * (p[:, 2, 0] - p[:, 0, 0])
    flip = area < 0
    t[flip] = t[flip][:, [0, 2, 1]]
    return v, t


def triangulate(spec: DomainSpec, h_target: float, *, min_angle: float = 25.0,
                n_fine: int = 1024) -> Mesh:
    """Constrained Delaunay mesh of the lens with boundary chords no longer than ``h_target``."""
    if spec.dimension != 2:
        raise MeshError("meshing is only available for N = 2")
    if not h_target > 0:
        raise MeshError("h_target must be positive")
    thick = spec.lens_thickness()
    if thick < 4.0 * h_target:
        raise MeshError(
            f"lens too thin for h={h_target:g} (thickness {thick:.4g}); use h <= {thick / 4:.4g}")
    n_s = max(4, math.ceil(spec.sigma_length() / h_target))
    n_t = max(4, math.ceil(spec.t_length() / h_target))
    poly = lens_polyline(spec, n_s, n_t)
    n = poly.n
    seg = np.stack([np.arange(n), (np.arange(n) + 1) % n], axis=1)
    area = math.sqrt(3.0) / 4.0 * h_target**2
    out = tr.triangulate({"vertices": poly.vertices, "segments": seg}, f"pq{min_angle}a{area:.17f}YQ")
    v, t = _from_triangle(out)
    if not np.array_equal(v[:n], poly.vertices):
        raise MeshError("mesher reordered the boundary vertices")
    params = np.where(
        (poly.tags == SIGMA)[:, None],
        np.stack([poly.sigma_param, np.roll(poly.sigma_param, -1)], axis=1),
        np.stack([poly.t_param, np.roll(poly.t_param, -1)], axis=1),
    )
    fine = fine_polyline(spec, n_fine)
    mesh = Mesh(v, t, seg, poly.tags.copy(), params, poly.lambda_index.copy(),
                segment_distances(v, fine.starts, fine.ends), fine, spec)
    _check_conforming(mesh)
    return mesh


def triangulate_polygon(poly: BoundaryPolyline, h_target: float, *, min_angle: float = 25.0) -> Mesh:
    """Mesh of a fixture polygon; every boundary edge inherits the segment's tag."""
    n = poly.n
    seg = np.stack([np.arange(n), (np.arange(n) + 1) % n], axis=1)
    area = math.sqrt(3.0) / 4.0 * h_target**2
    out = tr.triangulate({"vertices": poly.vertices, "segments": seg, "segment_markers": poly.tags + 1},
                         f"pq{min_angle}a{area:.17f}Q")
    v, t = _from_triangle(out)
    segs = np.asarray(out["segments"])
    tags = np.asarray(out["segment_markers"]).ravel() - 1
    segs = _orient_boundary(t, segs)
    mesh = Mesh(v, t, segs, tags, np.full((len(segs), 2), np.nan), np.zeros(0, dtype=int),
                segment_distances(v, poly.starts, poly.ends), poly, None)
    _check_conforming(mesh)
    return mesh


def _orient_boundary(triangles: np.ndarray, segs: np.ndarray) -> np.ndarray:
    """Orient each boundary segment along its triangle's counter-clockwise order."""
    directed = {}
    for tri in triangles:
        for k in range(3):
            directed[(int(tri[k]), int(tri[(k + 1) % 3]))] = True
    out = segs.copy()
    for i, (a, b) in enumerate(segs):
        if (int(a), int(b)) not in directed:
            out[i] = (b, a)
    return out


def _check_conforming(mesh: Mesh):
    edges, te = unique_edges(mesh.triangles)
    count = np.bincount(te.ravel(), minlength=len(edges))
    if np.any(count > 2):
        raise MeshError("edge shared by more than two triangles")
    bnd = {tuple(e) for e in edges[count == 1]}
    given = {tuple(sorted(map(int, e))) for e in mesh.boundary_edges}
    if bnd != given:
        raise MeshError("boundary edges do not match the mesh boundary")
    if np.any(mesh.areas <= 0):
        raise MeshError("non-positively oriented triangle")


def refine(mesh: Mesh, spec: DomainSpec | None = None) -> Mesh:
    """Red refinement; new boundary midpoints are moved onto the true curves."""
    spec = mesh.spec if spec is None else spec
    edges, te = unique_edges(mesh.triangles)
    nv = mesh.n_vertices
    mids = 0.5 * (mesh.vertices[edges[:, 0]] + mesh.vertices[edges[:, 1]])

    key = {tuple(e): i for i, e in enumerate(edges)}
    bid = np.array([key[tuple(sorted(map(int, e)))] for e in mesh.boundary_edges], dtype=int)
    pm = mesh.edge_params.mean(axis=1)
    if spec is not None:
        on_s = mesh.edge_tags == SIGMA
        on_t = mesh.edge_tags == T_ARC
        if on_s.any():
            mids[bid[on_s]] = spec.sigma_point(pm[on_s])
        if on_t.any():
            mids[bid[on_t]] = spec.t_point(pm[on_t])
    verts = np.vstack([mesh.vertices, mids])

    a, b, c = mesh.triangles.T
    mab, mbc, mca = (te[:, 0] + nv, te[:, 1] + nv, te[:, 2] + nv)
    tris = np.concatenate([
        np.stack([a, mab, mca], 1), np.stack([mab, b, mbc], 1),
        np.stack([mca, mbc, c], 1), np.stack([mab, mbc, mca], 1),
    ])
    m = bid + nv
    e0, e1 = mesh.boundary_edges.T
    bedges = np.concatenate([np.stack([e0, m], 1), np.stack([m, e1], 1)])
    tags = np.concatenate([mesh.edge_tags, mesh.edge_tags])
    params = np.concatenate([
        np.stack([mesh.edge_params[:, 0], pm], 1), np.stack([pm, mesh.edge_params[:, 1]], 1)])
    delta = segment_distances(verts, mesh.fine.starts, mesh.fine.ends)
    out = Mesh(verts, tris, bedges, tags, params, mesh.lambda_vertices.copy(), delta, mesh.fine, spec)
    return out


def refined(mesh: Mesh, levels: int) -> list[Mesh]:
    out = [mesh]
    for _ in range(levels):
        out.append(refine(out[-1]))
    return out


# ---------------------------------------------------------------------------
# quadrature


@dataclass
class VolumeQuadrature:
    points: np.ndarray  # (T, Q, 2)
    weights: np.ndarray  # (T, Q)
    bary: np.ndarray  # (Q, 3)


@dataclass
class BoundaryQuadrature:
    edges: np.ndarray  # indices into mesh.boundary_edges
    points: np.ndarray  # (E, 3, 2)
    weights: np.ndarray  # (E, 3)
    normals: np.ndarray  # (E, 2)
    s: np.ndarray  # (3,) edge parameter in [0, 1]


def volume_quadrature(mesh: Mesh) -> VolumeQuadrature:
    p = mesh.corners()
    pts = np.einsum("qk,tkd->tqd", TRI_BARY, p)
    return VolumeQuadrature(pts, mesh.areas[:, None] * TRI_W[None, :], TRI_BARY)


def boundary_quadrature(mesh: Mesh, tag: int | None = None) -> BoundaryQuadrature:
    idx = np.arange(len(mesh.boundary_edges)) if tag is None else np.flatnonzero(mesh.edge_tags == tag)
    e = mesh.boundary_edges[idx]
    a, b = mesh.vertices[e[:, 0]], mesh.vertices[e[:, 1]]
    d = b - a
    length = np.linalg.norm(d, axis=1)
    pts = a[:, None, :] + LINE_S[None, :, None] * d[:, None, :]
    nrm = np.stack([d[:, 1], -d[:, 0]], axis=1) / length[:, None]
    return BoundaryQuadrature(idx, pts, length[:, None] * LINE_W[None, :], nrm, LINE_S)


def volume_integral(mesh: Mesh, f) -> float:
    """Integral over the mesh of ``f`` (callable on an ``(M, 2)`` array)."""
    q = volume_quadrature(mesh)
    vals = np.asarray(f(q.points.reshape(-1, 2)), dtype=float).reshape(q.weights.shape)
    return fsum(vals * q.weights)


def boundary_integral(mesh: Mesh, tag: int | None, f) -> float:
    """Line integral of ``f`` over the boundary edges carrying ``tag`` (all edges if None).

    ``f`` receives points ``(M, 2)`` and outward normals ``(M, 2)``.
    """
    q = boundary_quadrature(mesh, tag)
    x = q.points.reshape(-1, 2)
    nu = np.repeat(q.normals, len(q.s), axis=0)
    vals = np.asarray(f(x, nu), dtype=float).reshape(q.weights.shape)
    return fsum(vals * q.weights)
