"""Derived quantities of a discrete solution and residual reports for the identities.

Everything here takes a solved :class:`~lens_torsion.fem.Field` and evaluates
integrals with the quadrature rules of :mod:`lens_torsion.mesh`.  The harmonic
companion ``h = |x - z|**2 / 2 - u`` and its Hessian ``I - Hess(u)`` drive the
stability estimates; ``delta`` always denotes the distance to the whole
boundary (cap and spherical patch).
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field as dc_field

import numpy as np

from .fem import Field, lipschitz_bound, normal_derivative_on
from .geometry import (SIGMA, T_ARC, GeometryError, diameter, parallel_set_connected,
                       parallel_set_mask, rho_extremes, segment_distances)
from .mesh import boundary_quadrature, fsum
from .oracle import IdentityReport, killing_field

N_DIM = 2  # the finite-element path is planar
TAUS = (0.5, 1.0, 1.5)


class IdentityError(ValueError):
    pass


# ---------------------------------------------------------------------------
# small helpers


def _vol(field: Field, values) -> float:
    return fsum(np.asarray(values) * field._vq.weights)


def _sigma_flux(field: Field):
    fl = normal_derivative_on(field, SIGMA)
    nu = np.broadcast_to(fl.normals[:, None, :], fl.points.shape)
    kq = np.sum(killing_field(fl.points) * nu, axis=-1)
    return fl, kq


def delta_at_quadrature(field: Field, exact: bool = False) -> np.ndarray:
    """Distance to the boundary at volume quadrature points, (T, Q).

    By default the vertex values carried by the mesh are interpolated
    linearly; ``exact=True`` measures the distance to the fine polyline.
    """
    mesh = field.mesh
    q = field._vq
    if exact:
        d = segment_distances(q.points.reshape(-1, 2), mesh.fine.starts, mesh.fine.ends)
        return d.reshape(q.weights.shape)
    return np.einsum("qk,tk->tq", q.bary, mesh.delta[mesh.triangles])


def hessian_deficit(field: Field) -> np.ndarray:
    """Per-element ``|Hess u|^2 - (Delta u)^2 / N`` (equal to ``|Hess h|^2``)."""
    H = field.hessians
    return np.sum(H * H, axis=(1, 2)) - np.trace(H, axis1=1, axis2=2) ** 2 / N_DIM


# ---------------------------------------------------------------------------
# R and z


def compute_R(field: Field) -> float:
    """``N int_Omega x_N / int_Sigma x_N``."""
    q = field._vq
    num = N_DIM * _vol(field, q.points[..., 1])
    bq = boundary_quadrature(field.mesh, SIGMA)
    den = fsum(bq.points[..., 1] * bq.weights)
    if not den > 0:
        raise IdentityError(f"int_Sigma x_N = {den:.3e} is not positive")
    return num / den


@dataclass
class CenterEstimate:
    z: np.ndarray  # from the surface integral over T
    z_volume: np.ndarray  # from the mean gradient over Omega
    area: float

    @property
    def discrepancy(self) -> float:
        return float(np.linalg.norm(self.z - self.z_volume))


def compute_z(field: Field) -> CenterEstimate:
    """Modified centre of mass ``(int x - int_T u x dS) / |Omega|``.

    The second term equals ``int_Omega grad u`` by the divergence theorem; that
    form gives an independent estimate whose distance from the first is
    reported as ``discrepancy``.
    """
    q = field._vq
    area = fsum(q.weights)
    first = np.array([_vol(field, q.points[..., k]) for k in range(2)])
    fl = normal_derivative_on(field, T_ARC)
    surf = np.array([fsum(fl.u * fl.points[..., k] * fl.weights) for k in range(2)])
    grad = np.array([_vol(field, field.quad_grads[..., k]) for k in range(2)])
    return CenterEstimate((first - surf) / area, (first - grad) / area, area)


def compute_z_sigma(field: Field, sigma: float) -> np.ndarray:
    """Centre ``(int x - int grad u) / |Omega_sigma|`` over the parallel set.

    The parallel set is the union of elements whose centroid lies farther than
    ``sigma`` from the boundary; it must be nonempty and connected.
    """
    if sigma == 0:
        return compute_z(field).z_volume
    ps = parallel_set_connected(field.mesh, sigma)
    if ps.empty:
        raise IdentityError(f"parallel set at sigma={sigma} is empty")
    if not ps.connected:
        raise IdentityError(f"parallel set at sigma={sigma} has {ps.components} components; "
                            "connectivity is only guaranteed for sigma <= delta0")
    mask = parallel_set_mask(field.mesh, sigma)
    q = field._vq
    w = q.weights[mask]
    area = fsum(w)
    vals = [fsum((q.points[mask][..., k] - field.quad_grads[mask][..., k]) * w) for k in range(2)]
    return np.array(vals) / area


def mean_gradient_h(field: Field, z) -> np.ndarray:
    """``int_Omega grad h``; vanishes for the modified centre of mass."""
    q = field._vq
    z = np.asarray(z, dtype=float)
    return np.array([_vol(field, q.points[..., k] - z[k] - field.quad_grads[..., k]) for k in range(2)])


# ---------------------------------------------------------------------------
# identities


def pohozaev_report(field: Field) -> IdentityReport:
    """``N int x_N P`` against ``1/2 int_Sigma u_nu^2 <X^q, nu>`` with ``P = |grad u|^2/2 - u``."""
    q = field._vq
    P = 0.5 * np.sum(field.quad_grads**2, axis=-1) - field.quad_values
    lhs = N_DIM * _vol(field, q.points[..., 1] * P)
    fl, kq = _sigma_flux(field)
    rhs = 0.5 * fsum(fl.u_nu**2 * kq * fl.weights)
    return IdentityReport("pohozaev", lhs, rhs, h=field.mesh.h)


def fundamental_report(field: Field, c: float | None = None) -> IdentityReport:
    """Weighted Hessian deficit against the boundary term with constant ``c``.

    ``c=None`` uses ``compute_R(field)``.  The left side keeps the discrete
    Laplacian of each element rather than the exact value ``N``.
    """
    note = "c=R"
    if c is None:
        c = compute_R(field)
    else:
        note = f"c={c!r}"
    q = field._vq
    lhs = _vol(field, q.points[..., 1] * (-field.quad_values) * hessian_deficit(field)[:, None])
    fl, kq = _sigma_flux(field)
    rhs = 0.5 * fsum((fl.u_nu**2 - c * c) * (fl.points[..., 1] * fl.u_nu - kq) * fl.weights)
    return IdentityReport("fundamental", lhs, rhs, h=field.mesh.h, note=note)


def c_independence_integral(field: Field) -> float:
    """``int_Sigma (x_N u_nu - <X^q, nu>)``, zero for an exact solution."""
    fl, kq = _sigma_flux(field)
    return fsum((fl.points[..., 1] * fl.u_nu - kq) * fl.weights)


def deficit_norm(field: Field, R: float) -> float:
    """``|| u_nu^2 - R^2 ||_{L^1(Sigma)}``."""
    fl = normal_derivative_on(field, SIGMA)
    return fsum(np.abs(fl.u_nu**2 - R * R) * fl.weights)


# ---------------------------------------------------------------------------
# the harmonic companion h


def sigma_samples(field: Field, n: int = 4001) -> np.ndarray:
    """Points of the cap: analytic samples when the domain spec is known."""
    mesh = field.mesh
    if mesh.spec is not None:
        return mesh.spec.sigma_samples(n)
    e = mesh.boundary_edges[mesh.edge_tags == SIGMA]
    return mesh.vertices[np.unique(e)]


@dataclass
class HQuantities:
    rho_e: float
    rho_i: float
    osc_h: float
    diameter: float
    cone_a: float | None
    bound_diameter: float
    bound_cone: float | None

    @property
    def gap(self) -> float:
        return self.rho_e - self.rho_i

    @property
    def holds(self) -> bool:
        ok = self.gap <= self.bound_diameter * (1 + 1e-12) + 1e-15
        if self.bound_cone is not None:
            ok = ok and self.gap <= self.bound_cone * (1 + 1e-12) + 1e-15
        return ok


def h_quantities(field: Field, z, samples=None) -> HQuantities:
    """Oscillation of ``h`` on the cap and the gap bound ``gap <= (8/d) osc_h``.

    On the cap ``u = 0``, so ``h`` reduces to ``|x - z|^2 / 2`` and the
    oscillation is computed from the sample points alone.
    """
    pts = sigma_samples(field) if samples is None else np.asarray(samples)
    z = np.asarray(z, dtype=float)
    rho_e, rho_i = rho_extremes(pts, z)
    Q = 0.5 * np.sum((pts - z) ** 2, axis=1)
    osc = float(Q.max() - Q.min())
    d = diameter(field.mesh.vertices[np.unique(field.mesh.boundary_edges)])
    spec = field.mesh.spec
    a = spec.cone_a if spec is not None else None
    return HQuantities(rho_e, rho_i, osc, d, a, 8.0 / d * osc, None if a is None else 8.0 / a * osc)


def weighted_hessian_norm(field: Field, z=None, tau: float = 1.0, *, exact_delta: bool = False) -> float:
    """``|| delta^tau Hess h ||_{L^2(Omega)}`` with ``Hess h = I - Hess u_h``.

    ``z`` does not enter the Hessian of ``h``; it is accepted for symmetry with
    the other ``h`` utilities.
    """
    Hh = np.eye(2)[None] - field.hessians
    sq = np.sum(Hh * Hh, axis=(1, 2))
    d = delta_at_quadrature(field, exact_delta)
    return math.sqrt(_vol(field, d ** (2 * tau) * sq[:, None]))


def grad_h_inf(field: Field, z) -> float:
    z = np.asarray(z, dtype=float)
    return float(np.linalg.norm(field._vq.points - z - field.quad_grads, axis=-1).max())


@dataclass
class CheckResult:
    name: str
    passed: bool
    lhs: float
    rhs: float
    tolerance: float = 0.0
    detail: dict = dc_field(default_factory=dict)
    applicable: bool = True

    def to_dict(self) -> dict:
        return asdict(self)


def grad_h_bound_check(field: Field, z, L: float | None = None) -> CheckResult:
    """``||grad h||_inf <= 2 (L + 1)``."""
    L = lipschitz_bound(field) if L is None else L
    g = grad_h_inf(field, z)
    return CheckResult("grad_h_bound", g <= 2 * (L + 1), g, 2 * (L + 1))


def lemma42_check(field: Field, slack_constant: float = 1.0, *, inner_radius: float | None = None,
                  exact_delta: bool = False) -> list[CheckResult]:
    """Pointwise lower bounds ``-u >= delta^2 / 2`` and ``-u >= r_i delta / 2``.

    Evaluated at every volume quadrature point with slack ``C h^2``.  The
    second bound is only checked when an interior sphere radius is known
    (argument, or the one stored on the domain spec).
    """
    mesh = field.mesh
    slack = slack_constant * mesh.h**2
    d = delta_at_quadrature(field, exact_delta)
    neg_u = -field.quad_values
    out = []
    gap = 0.5 * d**2 - neg_u
    bad = gap > slack
    out.append(CheckResult("distance_bound_quadratic", not bad.any(), float(gap.max()), slack, slack,
                           {"violations": int(bad.sum()), "points": int(gap.size)}))
    ri = inner_radius if inner_radius is not None else (mesh.spec.inner_radius if mesh.spec else None)
    if ri is not None:
        gap = 0.5 * ri * d - neg_u
        bad = gap > slack
        out.append(CheckResult("distance_bound_linear", not bad.any(), float(gap.max()), slack, slack,
                               {"violations": int(bad.sum()), "points": int(gap.size), "r_i": ri}))
    else:
        out.append(CheckResult("distance_bound_linear", True, float("nan"), float("nan"),
                               detail={"reason": "no interior sphere radius"}, applicable=False))
    return out


def weighted_hessian_checks(field: Field, R: float, *, L: float | None = None, m: float | None = None,
                            inner_radius: float | None = None, norms: dict | None = None,
                            deficit: float | None = None) -> list[CheckResult]:
    """The four weighted Hessian bounds against ``(L + 2) ||u_nu^2 - R^2||_1``.

    The cone-condition bound (weight ``delta^{3/2}``) always applies; the
    others need ``m > 0`` and/or an interior sphere radius ``r_i``.
    """
    L = lipschitz_bound(field) if L is None else L
    if m is None:
        m = float(field.mesh.vertices[:, 1].min())
    if inner_radius is None and field.mesh.spec is not None:
        inner_radius = field.mesh.spec.inner_radius
    dn = deficit_norm(field, R) if deficit is None else deficit
    if norms is None:
        norms = {t: weighted_hessian_norm(field, tau=t) for t in TAUS}
    base = (L + 2) * dn
    cases = [
        ("hessian_bound_cone", 1.5, 1.0, True),
        ("hessian_bound_height", 1.0, m, m > 0),
        ("hessian_bound_sphere", 1.0, inner_radius, inner_radius is not None),
        ("hessian_bound_height_sphere", 0.5, (m * inner_radius) if inner_radius else None,
         m > 0 and inner_radius is not None),
    ]
    out = []
    for name, tau, div, ok in cases:
        lhs = norms[tau] ** 2
        if not ok:
            out.append(CheckResult(name, True, lhs, float("nan"), detail={"tau": tau}, applicable=False))
            continue
        rhs = base / div
        out.append(CheckResult(name, lhs <= rhs, lhs, rhs, detail={"tau": tau}))
    return out


def mean_value_check(field: Field, z, slack_constant: float = 1.0) -> CheckResult:
    """Discrete maximum principle for ``h`` on vertex patches.

    ``h`` is harmonic, so at each interior vertex its value lies between the
    extremes over the surrounding patch boundary, up to ``C h^2``.
    """
    mesh = field.mesh
    z = np.asarray(z, dtype=float)
    nv = mesh.n_vertices
    hv = 0.5 * np.sum((mesh.vertices - z) ** 2, axis=1) - field.coef[:nv]
    tri = mesh.triangles
    lo = np.full(nv, np.inf)
    hi = np.full(nv, -np.inf)
    for k in range(3):
        for j in (1, 2):
            other = tri[:, (k + j) % 3]
            np.minimum.at(lo, tri[:, k], hv[other])
            np.maximum.at(hi, tri[:, k], hv[other])
    interior = np.ones(nv, dtype=bool)
    interior[np.unique(mesh.boundary_edges)] = False
    slack = slack_constant * mesh.h**2
    excess = np.maximum(lo - hv, hv - hi)[interior]
    worst = float(excess.max()) if excess.size else 0.0
    return CheckResult("h_patch_extremes", worst <= slack, worst, slack, slack,
                       {"interior_vertices": int(interior.sum())})


# ---------------------------------------------------------------------------
# formula utilities


def kappa(N: int, tau: float) -> float:
    """Interpolation exponent ``1 / (tau + N/2 - 1)``."""
    if N < 2:
        raise ValueError("N must be at least 2")
    if not tau > 0:
        raise ValueError(f"tau must be positive, got {tau}")
    den = tau + N / 2 - 1
    if not den > 0:
        raise ValueError("tau + N/2 - 1 must be positive")
    return 1.0 / den


def alpha_pq(N: int, p: float, q: float) -> float:
    """``p (q - N) / (N (q - p))``; ``q = inf`` gives the limit ``p / N``."""
    if N < 2:
        raise ValueError("N must be at least 2")
    if not (1 <= p <= N):
        raise ValueError(f"requires 1 <= p <= N, got p={p}, N={N}")
    if not q > p:
        raise ValueError(f"requires p < q, got p={p}, q={q}")
    if math.isinf(q):
        return p / N
    return p * (q - N) / (N * (q - p))


# ---------------------------------------------------------------------------
# bundles


@dataclass
class StabilityQuantities:
    R: float
    z: tuple[float, float]
    deficit: float
    gap: float
    osc_h: float
    weighted_norms: dict
    L: float
    m: float
    grad_h_inf: float
    h: float

    def to_dict(self) -> dict:
        d = asdict(self)
        d["weighted_norms"] = {str(k): v for k, v in self.weighted_norms.items()}
        return d


def stability_quantities(field: Field) -> StabilityQuantities:
    R = compute_R(field)
    z = compute_z(field).z
    hq = h_quantities(field, z)
    norms = {t: weighted_hessian_norm(field, tau=t) for t in TAUS}
    return StabilityQuantities(
        R=R, z=(float(z[0]), float(z[1])), deficit=deficit_norm(field, R), gap=hq.gap,
        osc_h=hq.osc_h, weighted_norms=norms, L=lipschitz_bound(field),
        m=float(field.mesh.vertices[:, 1].min()), grad_h_inf=grad_h_inf(field, z), h=field.mesh.h)


def certificate(field: Field, *, slack_constant: float = 1.0, fundamental_tol: float = 0.05,
                flux_floor: float = 0.05) -> dict:
    """Every identity and inequality check for one solve, with pass flags.

    The fundamental and Pohozaev identities pass when their relative residual
    is at most ``fundamental_tol`` or their absolute residual is below
    ``flux_floor * h`` (both sides tend to zero on a rigid lens, where only the
    first-order flux error remains).  The inequalities pass outright or, for
    the pointwise distance bounds, up to ``slack_constant * h**2``.
    """
    sq = stability_quantities(field)
    z = np.array(sq.z)
    reports = [pohozaev_report(field), fundamental_report(field), fundamental_report(field, 0.0)]
    checks = []
    for r in reports:
        floor = flux_floor * field.mesh.h
        ok = r.relative <= fundamental_tol or r.residual <= floor
        checks.append(CheckResult(f"{r.name}[{r.note}]" if r.note else r.name, ok, r.lhs, r.rhs,
                                  fundamental_tol, {"relative": r.relative, "absolute_floor": floor}))
    hq = h_quantities(field, z)
    checks.append(CheckResult("gap_bound", hq.holds, hq.gap, hq.bound_diameter,
                              detail={"bound_cone": hq.bound_cone, "diameter": hq.diameter}))
    checks += lemma42_check(field, slack_constant)
    checks += weighted_hessian_checks(field, sq.R, L=sq.L, m=sq.m, norms=sq.weighted_norms,
                                      deficit=sq.deficit)
    checks.append(grad_h_bound_check(field, z, sq.L))
    checks.append(mean_value_check(field, z, slack_constant))
    cz = compute_z(field)
    applicable = [c for c in checks if c.applicable]
    return {
        "h": field.mesh.h,
        "quantities": sq.to_dict(),
        "z_discrepancy": cz.discrepancy,
        "c_independence_integral": c_independence_integral(field),
        "reports": [r.to_dict() for r in reports],
        "checks": [c.to_dict() for c in checks],
        "tolerances": {"slack_constant": slack_constant, "fundamental_relative": fundamental_tol,
                       "flux_floor": flux_floor},
        "diagnostics": list(field.diagnostics),
        "passed": all(c.passed for c in applicable),
    }


def certificate_json(cert: dict) -> str:
    return json.dumps(cert, indent=2, sort_keys=True, default=_json_default)


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o))
