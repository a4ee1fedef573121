"""Lens domains inside the upper half-ball and their geometric quantities.

A lens is bounded by a (possibly perturbed) spherical cap ``Sigma`` centred
at ``z0`` and by the patch ``T`` of the unit sphere it cuts off.  In the
symmetric case ``|z0|**2 = 1 + R**2`` and the two spheres meet orthogonally
along the interface ``Lambda``.

Angles on ``Sigma`` are measured around ``z0`` from the axis pointing from
``z0`` towards the origin; angles on ``T`` are ordinary polar angles of the
unit circle.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import NamedTuple, Sequence

import numpy as np
import shapely
from scipy import integrate
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

SIGMA = 0
T_ARC = 1
LAMBDA = 2
TAG_NAMES = {SIGMA: "SIGMA", T_ARC: "T_ARC", LAMBDA: "LAMBDA"}
TAG_CODES = {v: k for k, v in TAG_NAMES.items()}


class GeometryError(ValueError):
    """Raised for inadmissible lens parameters."""


# ---------------------------------------------------------------------------
# perturbation profiles


def _bump(s):
    s = np.asarray(s, dtype=float)
    inside = np.abs(s) <= 1.0
    return np.where(inside, (0.5 * (1.0 + np.cos(np.pi * s))) ** 2, 0.0)


def _dbump(s):
    s = np.asarray(s, dtype=float)
    inside = np.abs(s) <= 1.0
    c = 0.5 * (1.0 + np.cos(np.pi * s))
    return np.where(inside, -np.pi * c * np.sin(np.pi * s), 0.0)


SHAPES = ("identity", "bump")


@dataclass(frozen=True)
class PerturbationProfile:
    """Radial perturbation ``r(phi) = R0 * (1 + amplitude * g(phi))``.

    ``g`` is a cosine-tapered bump of height 1 centred in ``window``; it
    vanishes together with its first three derivatives at the window ends,
    so the corners of the lens stay on the unit sphere.
    """

    amplitude: float = 0.0
    shape: str = "bump"
    window: tuple[float, float] = (-math.pi / 4, math.pi / 4)

    def __post_init__(self):
        if self.shape not in SHAPES:
            raise GeometryError(f"unknown perturbation shape {self.shape!r}")
        lo, hi = self.window
        if not hi > lo:
            raise GeometryError("perturbation window must have positive length")

    def _s(self, phi):
        lo, hi = self.window
        return (2.0 * np.asarray(phi, dtype=float) - (lo + hi)) / (hi - lo)

    def g(self, phi):
        if self.shape == "identity":
            return np.zeros_like(np.asarray(phi, dtype=float))
        return _bump(self._s(phi))

    def dg(self, phi):
        if self.shape == "identity":
            return np.zeros_like(np.asarray(phi, dtype=float))
        lo, hi = self.window
        return _dbump(self._s(phi)) * 2.0 / (hi - lo)

    @property
    def g_max(self) -> float:
        return 0.0 if self.shape == "identity" else 1.0

    @property
    def g_min(self) -> float:
        return 0.0

    def to_dict(self) -> dict:
        return {"amplitude": self.amplitude, "shape": self.shape, "window": list(self.window)}

    @classmethod
    def from_dict(cls, d: dict) -> "PerturbationProfile":
        return cls(float(d["amplitude"]), str(d["shape"]), tuple(float(t) for t in d["window"]))


# ---------------------------------------------------------------------------
# domain description


@dataclass(frozen=True)
class DomainSpec:
    dimension: int
    cap_radius: float
    cap_center: tuple[float, ...]
    perturbation: PerturbationProfile | None = None
    cone_theta: float = math.pi / 6
    cone_a: float = 0.1
    inner_radius: float | None = None

    def __post_init__(self):
        z = np.asarray(self.cap_center, dtype=float)
        if z.shape != (self.dimension,):
            raise GeometryError("cap_center must have `dimension` coordinates")
        if abs(z @ z - self.cap_radius**2 - 1.0) > 1e-12 * max(1.0, z @ z):
            raise GeometryError("cap must meet the unit sphere orthogonally: |z|^2 - R^2 != 1")

    # -- basic shape data -------------------------------------------------
    @property
    def z0(self) -> np.ndarray:
        return np.asarray(self.cap_center, dtype=float)

    @property
    def axis(self) -> np.ndarray:
        """Unit vector from the origin towards the cap centre."""
        return self.z0 / np.linalg.norm(self.z0)

    @property
    def epsilon(self) -> float:
        return 0.0 if self.perturbation is None else self.perturbation.amplitude

    @property
    def is_symmetric(self) -> bool:
        return self.perturbation is None or self.epsilon == 0.0 or self.perturbation.shape == "identity"

    @property
    def sigma_half_angle(self) -> float:
        """Half-opening of Sigma seen from z0."""
        return math.atan(1.0 / self.cap_radius)

    @property
    def t_half_angle(self) -> float:
        """Half-opening of T seen from the origin."""
        return math.atan(self.cap_radius)

    def _require_2d(self):
        if self.dimension != 2:
            raise GeometryError("this operation is only available for N = 2")

    # -- curves (N = 2) -------------------------------------------------
    def radius(self, phi):
        phi = np.asarray(phi, dtype=float)
        if self.perturbation is None:
            return np.full_like(phi, self.cap_radius)
        return self.cap_radius * (1.0 + self.epsilon * self.perturbation.g(phi))

    def dradius(self, phi):
        phi = np.asarray(phi, dtype=float)
        if self.perturbation is None:
            return np.zeros_like(phi)
        return self.cap_radius * self.epsilon * self.perturbation.dg(phi)

    def direction(self, phi):
        """Unit vector from z0 at angle phi (counter-clockwise) off the inward axis."""
        self._require_2d()
        phi = np.asarray(phi, dtype=float)
        base = math.atan2(-self.axis[1], -self.axis[0])
        return np.stack([np.cos(base + phi), np.sin(base + phi)], axis=-1)

    def sigma_point(self, phi):
        phi = np.asarray(phi, dtype=float)
        return self.z0 + self.radius(phi)[..., None] * self.direction(phi)

    def t_point(self, psi):
        psi = np.asarray(psi, dtype=float)
        return np.stack([np.cos(psi), np.sin(psi)], axis=-1)

    @property
    def sigma_window(self) -> tuple[float, float]:
        a = self.sigma_half_angle
        return (-a, a)

    @property
    def t_window(self) -> tuple[float, float]:
        """Polar-angle interval of T, from the corner at phi=+a to the one at phi=-a."""
        self._require_2d()
        c = math.atan2(self.axis[1], self.axis[0])
        b = self.t_half_angle
        return (c - b, c + b)

    @property
    def corners(self) -> np.ndarray:
        lo, hi = self.sigma_window
        return self.sigma_point(np.array([lo, hi]))

    def sigma_length(self) -> float:
        self._require_2d()
        lo, hi = self.sigma_window
        if self.is_symmetric:
            return self.cap_radius * (hi - lo)
        speed = lambda p: math.hypot(float(self.radius(p)), float(self.dradius(p)))
        return integrate.quad(speed, lo, hi, epsabs=1e-13, limit=200)[0]

    def t_length(self) -> float:
        return 2.0 * self.t_half_angle

    def lens_thickness(self) -> float:
        """Distance along the symmetry axis between T and Sigma."""
        self._require_2d()
        return 1.0 - (np.linalg.norm(self.z0) - float(self.radius(0.0)))

    def sigma_samples(self, n: int = 4001) -> np.ndarray:
        lo, hi = self.sigma_window
        return self.sigma_point(np.linspace(lo, hi, n))

    @cached_property
    def min_height(self) -> float:
        if self.dimension == 2:
            pts = np.vstack([self.sigma_samples(20001), self.t_point(np.linspace(*self.t_window, 2001))])
            return max(float(pts[:, 1].min()), 0.0)
        # axisymmetric caps only: lowest point of Sigma or of the interface
        if not self.is_symmetric or np.linalg.norm(self.z0[:-1]) > 1e-14:
            raise GeometryError("min_height in N >= 3 is only available for axisymmetric caps")
        return min(self.z0[-1] - self.cap_radius, 1.0 / np.linalg.norm(self.z0))

    # -- serialization --------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "dimension": self.dimension,
            "cap_radius": self.cap_radius,
            "cap_center": list(self.cap_center),
            "perturbation": None if self.perturbation is None else self.perturbation.to_dict(),
            "cone_theta": self.cone_theta,
            "cone_a": self.cone_a,
            "inner_radius": self.inner_radius,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, d: dict) -> "DomainSpec":
        pert = d.get("perturbation")
        return cls(
            dimension=int(d["dimension"]),
            cap_radius=float(d["cap_radius"]),
            cap_center=tuple(float(t) for t in d["cap_center"]),
            perturbation=None if pert is None else PerturbationProfile.from_dict(pert),
            cone_theta=float(d.get("cone_theta", math.pi / 6)),
            cone_a=float(d.get("cone_a", 0.1)),
            inner_radius=None if d.get("inner_radius") is None else float(d["inner_radius"]),
        )

    @classmethod
    def from_json(cls, text: str) -> "DomainSpec":
        return cls.from_dict(json.loads(text))


def _direction_vector(N: int, azimuth) -> np.ndarray:
    if azimuth is None:
        w = np.zeros(N)
        w[-1] = 1.0
        return w
    if np.ndim(azimuth) == 0:
        if N != 2:
            raise GeometryError("a scalar azimuth (polar angle) is only meaningful for N = 2")
        return np.array([math.cos(azimuth), math.sin(azimuth)])
    w = np.asarray(azimuth, dtype=float)
    if w.shape != (N,) or not np.linalg.norm(w) > 0:
        raise GeometryError("azimuth must be a nonzero vector in R^N")
    return w / np.linalg.norm(w)


def make_symmetric_cap(N: int, R: float, azimuth=None, *, cone_theta=math.pi / 6,
                       cone_a=None) -> DomainSpec:
    """Lens cut from the unit ball by the sphere of radius ``R`` meeting it orthogonally.

    ``azimuth`` is the direction of the cap centre ``z`` (a unit vector, or a
    polar angle when ``N == 2``); the default is ``e_N``.  The cone height
    defaults to ``0.1 * min(1, R)``: near the right-angle corners a cone of
    fixed height stops fitting once the cap radius drops below about 0.7.
    """
    if not R > 0:
        raise GeometryError(f"cap radius must be positive, got {R}")
    if cone_a is None:
        cone_a = 0.1 * min(1.0, float(R))
    if N < 2:
        raise GeometryError("dimension must be at least 2")
    w = _direction_vector(N, azimuth)
    z = math.sqrt(1.0 + R * R) * w
    if not z[-1] > 0:
        raise GeometryError("cap centre must lie above the equatorial plane")
    if np.linalg.norm(z[:-1]) > 1.0 + 1e-12:
        raise GeometryError("|z'| > 1: the lens leaves the upper half-ball")
    # the symmetric lens is convex, so for the inner sphere condition only the
    # smaller of the two curvature radii matters
    return DomainSpec(N, float(R), tuple(float(t) for t in z), None, cone_theta, cone_a,
                      inner_radius=min(float(R), 1.0))


def make_perturbed_domain(base: DomainSpec, eps: float,
                          g: PerturbationProfile | None = None) -> DomainSpec:
    if base.dimension != 2:
        raise GeometryError("perturbed domains are only built for N = 2")
    if not base.is_symmetric:
        raise GeometryError("base domain must be a symmetric cap")
    if eps == 0.0:
        return base
    lo, hi = base.sigma_window
    prof = g if g is not None else PerturbationProfile(window=(lo, hi))
    if prof.window[0] < lo - 1e-12 or prof.window[1] > hi + 1e-12:
        raise GeometryError("perturbation window exceeds the angular extent of the cap")
    prof = replace(prof, amplitude=float(eps))
    spec = replace(base, perturbation=prof, inner_radius=None)
    _check_admissible(spec)
    return spec


def _check_admissible(spec: DomainSpec, n: int = 4001):
    lo, hi = spec.sigma_window
    phi = np.linspace(lo, hi, n)[1:-1]
    r = spec.radius(phi)
    if np.any(r <= 0):
        raise GeometryError("perturbed radius becomes nonpositive")
    x = spec.sigma_point(phi)
    if np.any(x[:, 1] <= 0):
        raise GeometryError(f"eps={spec.epsilon}: Sigma leaves the upper half-plane")
    rad = np.linalg.norm(x, axis=1)
    if np.any(rad >= 1.0 + 1e-12):
        raise GeometryError(f"eps={spec.epsilon}: Sigma leaves the unit ball")


# ---------------------------------------------------------------------------
# polylines


@dataclass
class BoundaryPolyline:
    """Closed counter-clockwise polygon; segment ``i`` joins vertex ``i`` to ``i+1``."""

    vertices: np.ndarray
    tags: np.ndarray
    lambda_index: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    sigma_param: np.ndarray | None = None
    t_param: np.ndarray | None = None

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=float)
        self.tags = np.asarray(self.tags, dtype=int)
        self.lambda_index = np.asarray(self.lambda_index, dtype=int)

    @property
    def n(self) -> int:
        return len(self.vertices)

    @property
    def starts(self) -> np.ndarray:
        return self.vertices

    @property
    def ends(self) -> np.ndarray:
        return np.roll(self.vertices, -1, axis=0)

    @property
    def lengths(self) -> np.ndarray:
        return np.linalg.norm(self.ends - self.starts, axis=1)

    @property
    def normals(self) -> np.ndarray:
        d = self.ends - self.starts
        return np.stack([d[:, 1], -d[:, 0]], axis=1) / self.lengths[:, None]

    @property
    def signed_area(self) -> float:
        x, y = self.vertices.T
        return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))

    def vertex_tags(self) -> np.ndarray:
        vt = self.tags.copy()
        vt[self.lambda_index] = LAMBDA
        return vt

    def tag_length(self, tag: int) -> float:
        return float(self.lengths[self.tags == tag].sum())

    def polygon(self) -> shapely.Polygon:
        return shapely.Polygon(self.vertices)

    def contains(self, pts) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        poly = self.polygon()
        shapely.prepare(poly)
        return shapely.contains_xy(poly, pts[..., 0], pts[..., 1])

    def to_csv(self) -> str:
        lines = ["x1,x2,tag"]
        for (x1, x2), t in zip(self.vertices, self.vertex_tags()):
            lines.append(f"{x1:.17g},{x2:.17g},{TAG_NAMES[int(t)]}")
        return "\n".join(lines) + "\n"


def polygon_polyline(vertices, tag: int = SIGMA) -> BoundaryPolyline:
    """Untagged fixture polygon (all segments share ``tag``), reoriented counter-clockwise."""
    v = np.asarray(vertices, dtype=float)
    poly = BoundaryPolyline(v, np.full(len(v), tag))
    if poly.signed_area < 0:
        poly = BoundaryPolyline(v[::-1].copy(), np.full(len(v), tag))
    return poly


def _sigma_params_by_arclength(spec: DomainSpec, n_sigma: int) -> np.ndarray:
    lo, hi = spec.sigma_window
    if spec.is_symmetric:
        return np.linspace(lo, hi, n_sigma + 1)
    phi = np.linspace(lo, hi, 20001)
    speed = np.hypot(spec.radius(phi), spec.dradius(phi))
    s = integrate.cumulative_trapezoid(speed, phi, initial=0.0)
    target = np.linspace(0.0, s[-1], n_sigma + 1)
    out = np.interp(target, s, phi)
    out[0], out[-1] = lo, hi
    return out


def lens_polyline(spec: DomainSpec, n_sigma: int, n_t: int) -> BoundaryPolyline:
    """Polyline with ``n_sigma`` arc-length-uniform chords on Sigma and ``n_t`` on T."""
    spec._require_2d()
    phi = _sigma_params_by_arclength(spec, n_sigma)
    t0, t1 = spec.t_window
    psi = np.linspace(t0, t1, n_t + 1)
    sig = spec.sigma_point(phi)
    arc = spec.t_point(psi[1:-1])
    verts = np.vstack([sig, arc])
    # corners are computed once from Sigma; snap them exactly onto the unit circle
    for k in (0, n_sigma):
        verts[k] /= np.linalg.norm(verts[k])
    tags = np.concatenate([np.full(n_sigma, SIGMA), np.full(n_t, T_ARC)])
    n = len(verts)
    sp = np.full(n, np.nan)
    sp[: n_sigma + 1] = phi
    tp = np.full(n, np.nan)
    tp[n_sigma + 1:] = psi[1:-1]
    tp[n_sigma] = t0
    tp[0] = t1
    return BoundaryPolyline(verts, tags, np.array([0, n_sigma]), sp, tp)


def boundary_polyline(spec: DomainSpec, n: int) -> BoundaryPolyline:
    if n < 16:
        raise GeometryError("need at least 16 segments")
    ls, lt = spec.sigma_length(), spec.t_length()
    n_sigma = max(4, int(round(n * ls / (ls + lt))))
    n_sigma = min(n_sigma, n - 4)
    return lens_polyline(spec, n_sigma, n - n_sigma)


def chord_deviation(spec: DomainSpec, poly: BoundaryPolyline) -> float:
    """Largest distance between a chord midpoint and the curve point at the mid-parameter."""
    worst = 0.0
    for i in range(poly.n):
        j = (i + 1) % poly.n
        mid = 0.5 * (poly.vertices[i] + poly.vertices[j])
        if poly.tags[i] == SIGMA:
            p = spec.sigma_point(0.5 * (poly.sigma_param[i] + poly.sigma_param[j]))
        else:
            p = spec.t_point(0.5 * (poly.t_param[i] + poly.t_param[j]))
        worst = max(worst, float(np.linalg.norm(p - mid)))
    return worst


# ---------------------------------------------------------------------------
# distances


def segment_distances(pts, a, b, chunk: int = 2_000_000) -> np.ndarray:
    """Distance from each point to the union of segments ``a[k] -> b[k]``."""
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    a = np.asarray(a, dtype=float)
    d = b - a
    dd = np.einsum("ij,ij->i", d, d)
    out = np.empty(len(pts))
    step = max(1, chunk // max(1, len(a)))
    for s in range(0, len(pts), step):
        p = pts[s:s + step, None, :]
        t = np.clip(np.einsum("pkj,kj->pk", p - a, d) / dd, 0.0, 1.0)
        q = a + t[..., None] * d
        out[s:s + step] = np.sqrt(np.min(np.sum((p - q) ** 2, axis=-1), axis=1))
    return out


def distance_to_boundary(poly: BoundaryPolyline, x, signed: bool = False):
    """Euclidean distance from ``x`` (one point or an array) to the polyline.

    With ``signed=True`` points outside the polygon get a negative value.
    """
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    d = segment_distances(x.reshape(-1, 2), poly.starts, poly.ends)
    if signed:
        d = np.where(poly.contains(x.reshape(-1, 2)) | (d == 0.0), d, -d)
    return float(d[0]) if single else d


def rho_extremes(sigma_samples, z) -> tuple[float, float]:
    pts = np.asarray(sigma_samples, dtype=float)
    if pts.size == 0:
        raise ValueError("no samples")
    r = np.linalg.norm(pts - np.asarray(z, dtype=float), axis=1)
    return float(r.max()), float(r.min())


def min_height(poly: BoundaryPolyline) -> float:
    return float(poly.vertices[:, -1].min())


def diameter(pts) -> float:
    from scipy.spatial import ConvexHull
    from scipy.spatial.distance import pdist

    pts = np.asarray(pts, dtype=float)
    if len(pts) > 3:
        pts = pts[ConvexHull(pts).vertices]
    return float(pdist(pts).max())


# ---------------------------------------------------------------------------
# cone / John / parallel-set quantities


def sigma0(theta: float, a: float, delta0: float | None = None) -> float:
    if not (0 < theta <= math.pi / 2 + 1e-15) or not a > 0:
        raise ValueError("need theta in (0, pi/2] and a > 0")
    if delta0 is None:
        delta0 = a / 4
    s = math.sin(theta)
    return min(0.5 * a * s / (1.0 + s), delta0)


def john_constant_bound(theta: float, a: float, d_omega: float | None = None,
                        delta0: float | None = None) -> float:
    """Upper bound for the John constant of a (theta, a)-cone domain (``inf`` if degenerate)."""
    if d_omega is None:
        d_omega = 2.0  # any subset of the unit ball
    if delta0 is None:
        delta0 = a / 4
    s = math.sin(theta)
    if s <= 0.0 or a <= 0.0:
        return math.inf
    inner = min(0.5 * a * s / (1.0 + s), delta0)
    if inner <= 0.0:
        return math.inf
    return max(1.0 / s, d_omega / inner)


class ParallelSet(NamedTuple):
    connected: bool
    components: int
    n_elements: int

    @property
    def empty(self) -> bool:
        return self.n_elements == 0


def parallel_set_mask(mesh, sigma: float) -> np.ndarray:
    """Elements whose centroid lies farther than ``sigma`` from the boundary."""
    cent = mesh.vertices[mesh.triangles].mean(axis=1)
    d = segment_distances(cent, mesh.fine.starts, mesh.fine.ends)
    return d > sigma


def parallel_set_connected(mesh, sigma: float) -> ParallelSet:
    """Connectivity of the element sub-mesh approximating the parallel set.

    An empty sub-mesh (``sigma`` too large) gives ``components == 0``.
    """
    keep = np.flatnonzero(parallel_set_mask(mesh, sigma))
    if len(keep) == 0:
        return ParallelSet(False, 0, 0)
    # elements touching at a vertex count as connected: the sub-mesh is a
    # closed union of triangles, and staircase edges of a thin strip often
    # meet only at corners
    tri = mesh.triangles[keep]
    nk = len(keep)
    rows = np.repeat(np.arange(nk), 3)
    cols = nk + tri.ravel()
    adj = coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(nk + mesh.n_vertices,) * 2)
    _, labels = connected_components(adj, directed=False)
    ncomp = len(np.unique(labels[:nk]))
    return ParallelSet(ncomp == 1, int(ncomp), len(keep))


def parallel_set_polyline(poly: BoundaryPolyline, sigma: float, quad_segs: int = 32) -> BoundaryPolyline:
    """Polygonal boundary of ``{x : dist(x, boundary) > sigma}`` (largest component)."""
    inner = poly.polygon().buffer(-sigma, quad_segs=quad_segs)
    if inner.is_empty:
        raise GeometryError("parallel set is empty")
    if inner.geom_type == "MultiPolygon":
        inner = max(inner.geoms, key=lambda g: g.area)
    coords = np.asarray(inner.exterior.coords)[:-1]
    return polygon_polyline(coords)


class ConeCheck(NamedTuple):
    passed: bool
    checked: int
    witness: dict | None


def _cone_template(theta: float, a: float, n_r: int, n_ang: int) -> np.ndarray:
    shrink = 1.0 - 1e-9
    r = a * shrink * np.arange(1, n_r + 1) / n_r
    ang = np.linspace(-theta, theta, n_ang) * shrink
    rr, aa = np.meshgrid(r, ang, indexing="ij")
    return np.stack([rr.ravel(), aa.ravel()], axis=1)  # (radius, angle off axis)


def cone_condition_check(poly: BoundaryPolyline, theta: float, a: float, *, n_dirs: int = 72,
                         n_r: int = 12, n_ang: int = 9, n_w: int = 8,
                         stride: int = 1) -> ConeCheck:
    """Sampled certificate of the (theta, a)-uniform interior cone condition.

    For each boundary vertex ``x`` (every ``stride``-th) look for an axis ``omega``
    such that ``w + C_omega`` lies inside the polygon for every sampled ``w`` in
    ``B_a(x)``: boundary vertices and a grid of interior points.  The first
    vertex for which no sampled axis works is returned as the witness.
    """
    P = poly.polygon()
    shapely.prepare(P)
    verts = poly.vertices
    tmpl = _cone_template(theta, a, n_r, n_ang)
    g = np.linspace(-a, a, 2 * n_w + 1)
    gx, gy = np.meshgrid(g, g)
    grid = np.stack([gx.ravel(), gy.ravel()], axis=1)
    grid = grid[np.linalg.norm(grid, axis=1) < a]
    nrm = poly.normals
    offsets = np.concatenate([[0.0], np.repeat(np.arange(1, n_dirs // 2 + 1), 2)
                              * np.tile([1.0, -1.0], n_dirs // 2)]) * (2 * np.pi / n_dirs)
    checked = 0
    for i in range(0, poly.n, stride):
        x = verts[i]
        checked += 1
        inward = -(nrm[i] + nrm[i - 1])
        base = math.atan2(inward[1], inward[0])
        near = verts[np.linalg.norm(verts - x, axis=1) < a]
        cand = x + grid
        cand = cand[shapely.contains_xy(P, cand[:, 0], cand[:, 1])]
        w = np.vstack([near, cand])
        best = None
        ok = False
        for off in offsets:
            ax = base + off
            ang = ax + tmpl[:, 1]
            cone = tmpl[:, :1] * np.stack([np.cos(ang), np.sin(ang)], axis=1)
            pts = (w[:, None, :] + cone[None, :, :]).reshape(-1, 2)
            inside = shapely.contains_xy(P, pts[:, 0], pts[:, 1])
            if inside.all():
                ok = True
                break
            bad = int((~inside).sum())
            if best is None or bad < best[0]:
                k = int(np.flatnonzero(~inside)[0])
                best = (bad, ax, w[k // len(cone)], pts[k])
        if not ok:
            return ConeCheck(False, checked, {
                "vertex": i, "x": x.tolist(), "axis_angle": best[1],
                "w": best[2].tolist(), "outside_point": best[3].tolist(), "n_outside": best[0],
            })
    return ConeCheck(True, checked, None)


# ---------------------------------------------------------------------------
# fixtures


def disk_polyline(r: float = 1.0, n: int = 128, center=(0.0, 0.0)) -> BoundaryPolyline:
    t = np.linspace(0.0, 2 * np.pi, n, endpoint=False)
    return polygon_polyline(np.asarray(center) + r * np.stack([np.cos(t), np.sin(t)], axis=1))


def slit_square_polyline(width: float = 0.02, depth: float = 0.5, n_side: int = 20) -> BoundaryPolyline:
    """Unit square with a thin vertical slit cut down from the middle of the top side."""
    s = np.linspace(0.0, 1.0, n_side + 1)[:-1]
    bottom = np.stack([s, np.zeros_like(s)], axis=1)
    right = np.stack([np.ones_like(s), s], axis=1)
    x0, x1 = 0.5 + width / 2, 0.5 - width / 2
    top_r = np.stack([1.0 - s * (1.0 - x0) / 1.0, np.ones_like(s)], axis=1)
    top_r = top_r[top_r[:, 0] > x0 + 1e-12]
    m = max(2, int(depth * n_side))
    down = np.stack([np.full(m, x0), np.linspace(1.0, 1.0 - depth, m, endpoint=False)], axis=1)
    up = np.stack([np.full(m, x1), np.linspace(1.0 - depth, 1.0, m, endpoint=False)], axis=1)
    top_l = np.stack([np.linspace(x1, 0.0, n_side // 2, endpoint=False), np.ones(n_side // 2)], axis=1)
    left = np.stack([np.zeros_like(s), 1.0 - s], axis=1)
    pts = np.vstack([bottom, right, top_r, down, up, top_l, left])
    keep = np.concatenate([[True], np.linalg.norm(np.diff(pts, axis=0), axis=1) > 1e-12])
    return polygon_polyline(pts[keep])


def dumbbell_polyline(neck_half_width: float = 0.05, neck_length: float = 0.5) -> BoundaryPolyline:
    """Two unit squares joined by a straight neck of the given half-width."""
    w, L = neck_half_width, neck_length
    x2 = 1.0 + L
    pts = [
        (0, 0), (1, 0), (1, 0.5 - w), (x2, 0.5 - w), (x2, 0), (x2 + 1, 0), (x2 + 1, 1),
        (x2, 1), (x2, 0.5 + w), (1, 0.5 + w), (1, 1), (0, 1),
    ]
    return polygon_polyline(pts)
