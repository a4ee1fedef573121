"""Closed-form symmetric solution and mesh-free evaluation of the integral identities.

On a symmetric lens the torsion problem has the explicit solution
``u = (|x - z|**2 - R**2) / 2``.  Every volume and surface integral appearing
in the identities is evaluated here by nested adaptive Gauss-Kronrod
quadrature (``scipy.integrate.quad``) in polar coordinates around ``z``, so the
numbers are independent of the finite-element pipeline.

For ``N = 3`` only the axisymmetric configuration (``z`` on the vertical
axis) is supported; all integrands then depend on the meridian coordinates
``(rho, x_N)`` only and the azimuthal integral contributes a factor ``2 pi``.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy import integrate

from .geometry import GeometryError, make_symmetric_cap


@dataclass
class IdentityReport:
    """Both sides of one integral identity and how well they agree."""

    name: str
    lhs: float
    rhs: float
    quad_error_estimate: float = 0.0
    h: float | None = None
    note: str = ""

    @property
    def residual(self) -> float:
        return abs(self.lhs - self.rhs)

    @property
    def scale(self) -> float:
        return max(abs(self.lhs), abs(self.rhs), 1e-30)

    @property
    def relative(self) -> float:
        return self.residual / self.scale

    def to_dict(self) -> dict:
        d = {"identity": self.name, "lhs": self.lhs, "rhs": self.rhs,
             "residual": self.residual, "quad_error_estimate": self.quad_error_estimate}
        if self.h is not None:
            d["h"] = self.h
            d["relative"] = self.relative
        if self.note:
            d["note"] = self.note
        return d


def reports_to_json(reports) -> str:
    return json.dumps([r.to_dict() for r in reports], indent=2)


def killing_field(x, N: int | None = None) -> np.ndarray:
    """Conformal Killing field ``x_N x - (|x|^2 + 1)/2 e_N``, row-wise for (M, N) input."""
    x = np.asarray(x, dtype=float)
    if N is not None and x.shape[-1] != N:
        raise ValueError(f"expected points in R^{N}, got trailing dimension {x.shape[-1]}")
    out = x[..., -1:] * x
    out[..., -1] -= 0.5 * (np.sum(x * x, axis=-1) + 1.0)
    return out


@dataclass(frozen=True)
class ExactSolution:
    dimension: int
    center: tuple[float, ...]
    radius: float

    @property
    def z(self) -> np.ndarray:
        return np.asarray(self.center, dtype=float)

    def u(self, x) -> np.ndarray:
        d = np.asarray(x, dtype=float) - self.z
        return 0.5 * (np.sum(d * d, axis=-1) - self.radius**2)

    def grad(self, x) -> np.ndarray:
        return np.asarray(x, dtype=float) - self.z

    def hessian(self, x=None) -> np.ndarray:
        return np.eye(self.dimension)

    def laplacian(self, x=None) -> float:
        return float(np.trace(self.hessian(x)))

    def certify(self, n: int = 1000, seed: int = 0, tol: float = 1e-12) -> dict:
        """Check the three defining properties at ``n`` random points.

        Returns the worst violation of each: ``Delta u = N``, ``u = 0`` on the
        cap sphere, and ``u_nu - u = 0`` on the unit sphere.
        """
        rng = np.random.default_rng(seed)
        N, z, R = self.dimension, self.z, self.radius
        dirs = rng.normal(size=(n, N))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        on_cap = z + R * dirs
        on_unit = dirs
        lap = abs(self.laplacian() - N)
        cap = float(np.max(np.abs(self.u(on_cap))))
        unu = np.sum(self.grad(on_unit) * on_unit, axis=1)
        steklov = float(np.max(np.abs(unu - self.u(on_unit))))
        out = {"laplacian": lap, "dirichlet": cap, "steklov": steklov}
        out["passed"] = max(out.values()) <= tol * max(1.0, R * R, z @ z)
        return out


def exact_solution(N: int, R: float, azimuth=None, certify: bool = True) -> ExactSolution:
    spec = make_symmetric_cap(N, R, azimuth)
    sol = ExactSolution(N, spec.cap_center, spec.cap_radius)
    if certify:
        c = sol.certify()
        if not c["passed"]:
            raise GeometryError(f"closed-form solution failed its self-check: {c}")
    return sol


# ---------------------------------------------------------------------------
# lens integrals in polar coordinates around z


class _LensIntegrator:
    """Adaptive integrals over the lens ``B_1 cap B_R(z)`` and over its cap ``Sigma``.

    A point is ``x = z + t * omega(phi)`` where ``omega(phi)`` is the direction
    obtained by turning ``-z/|z|`` by ``phi``.  The ray enters the unit ball at
    ``t1(phi) = |z| cos(phi) - sqrt(1 - |z|^2 sin(phi)^2)`` and the lens ends at
    ``t = R``; ``|phi|`` ranges up to ``atan(1/R)``.
    """

    def __init__(self, N: int, z: np.ndarray, R: float, tol: float):
        if N not in (2, 3):
            raise GeometryError("the oracle supports N = 2 and N = 3 only")
        self.N, self.R, self.tol = N, R, tol
        self.znorm = float(np.linalg.norm(z))
        self.phic = math.atan(1.0 / R)
        # meridian frame: e_down points from z to the origin, e_side is its rotation
        if N == 2:
            self.e_down = -z / self.znorm
            self.e_side = np.array([self.e_down[1], -self.e_down[0]])
            self.z2 = z
        else:
            if np.linalg.norm(z[:-1]) > 1e-14:
                raise GeometryError("N = 3 oracle requires z on the vertical axis")
            self.z2 = np.array([0.0, self.znorm])
            self.e_down = np.array([0.0, -1.0])
            self.e_side = np.array([1.0, 0.0])
        self.err = 0.0

    def omega(self, phi):
        return math.cos(phi) * self.e_down + math.sin(phi) * self.e_side

    def t_enter(self, phi: float) -> float:
        s = math.sin(phi)
        disc = max(1.0 - self.znorm**2 * s * s, 0.0)
        return self.znorm * math.cos(phi) - math.sqrt(disc)

    def _phi_range(self):
        return (-self.phic, self.phic) if self.N == 2 else (0.0, self.phic)

    def _angular_weight(self, phi: float) -> float:
        return 1.0 if self.N == 2 else 2.0 * math.pi * math.sin(phi)

    def volume(self, f) -> float:
        """``int_Omega f(x) dx`` with ``f`` taking a meridian point ``(2,)`` array."""
        tol = self.tol
        errs = []

        def inner(phi):
            om = self.omega(phi)
            jac = self._angular_weight(phi)
            val, err = integrate.quad(
                lambda t: f(self.z2 + t * om) * t ** (self.N - 1),
                self.t_enter(phi), self.R, epsabs=tol * 1e-2, epsrel=1e-13, limit=200)
            errs.append(abs(jac) * err)
            return jac * val

        lo, hi = self._phi_range()
        val, err = integrate.quad(inner, lo, hi, epsabs=tol * 1e-1, epsrel=1e-13, limit=200)
        self.err += err + (hi - lo) * max(errs, default=0.0)
        return val

    def sigma(self, f) -> float:
        """``int_Sigma f(x, nu) dS`` on the cap ``|x - z| = R``."""
        R = self.R

        def integrand(phi):
            om = self.omega(phi)
            return f(self.z2 + R * om, om) * R ** (self.N - 1) * self._angular_weight(phi)

        lo, hi = self._phi_range()
        val, err = integrate.quad(integrand, lo, hi, epsabs=self.tol * 1e-1, epsrel=1e-13, limit=200)
        self.err += err
        return val

    def t_patch(self, f) -> float:
        """``int_T f(x, nu) dS`` on the unit-sphere patch, with ``nu = x``."""
        psic = math.atan(self.R)
        up = -self.e_down

        def integrand(psi):
            x = math.cos(psi) * up + math.sin(psi) * self.e_side
            w = 1.0 if self.N == 2 else 2.0 * math.pi * abs(math.sin(psi))
            return f(x, x) * w

        lo, hi = (-psic, psic) if self.N == 2 else (0.0, psic)
        val, err = integrate.quad(integrand, lo, hi, epsabs=self.tol * 1e-1, epsrel=1e-13, limit=200)
        self.err += err
        return val

    def take_error(self) -> float:
        e, self.err = self.err, 0.0
        return e


def _kq_dot(x, nu) -> float:
    """``<X^q, nu>`` in meridian coordinates (rotation invariant)."""
    return x[1] * (x @ nu) - 0.5 * (x @ x + 1.0) * nu[1]


def oracle_identity_report(N: int, R: float, azimuth=None, tol: float = 1e-9) -> list[IdentityReport]:
    """Evaluate the identities for the exact solution on the symmetric lens.

    Returns reports for the Pohozaev identity, the fundamental identity with
    ``c = R`` and with ``c = 0``, the formula for ``R``, and the flux closure of
    ``X^u = x_N grad u - u e_N``.
    """
    sol = exact_solution(N, R, azimuth)
    z = sol.z
    lens = _LensIntegrator(N, z, R, tol)
    zc = lens.z2

    def u(x):
        d = x - zc
        return 0.5 * (d @ d - R * R)

    def grad(x):
        return x - zc

    lap = sol.laplacian()
    hess_sq = float(np.sum(sol.hessian() ** 2))

    def P(x):
        g = grad(x)
        return 0.5 * (g @ g) - u(x)

    reports = []

    lhs = N * lens.volume(lambda x: x[1] * P(x))
    rhs = 0.5 * lens.sigma(lambda x, nu: (grad(x) @ nu) ** 2 * _kq_dot(x, nu))
    reports.append(IdentityReport("pohozaev", lhs, rhs, lens.take_error()))

    def fundamental(c: float, name: str):
        lhs = lens.volume(lambda x: x[1] * (-u(x)) * (hess_sq - lap**2 / N))
        rhs = 0.5 * lens.sigma(
            lambda x, nu: ((grad(x) @ nu) ** 2 - c * c) * (x[1] * (grad(x) @ nu) - _kq_dot(x, nu)))
        reports.append(IdentityReport(name, lhs, rhs, lens.take_error(), note=f"c={c!r}"))

    fundamental(R, "fundamental_c=R")
    fundamental(0.0, "fundamental_c=0")

    vol = lens.volume(lambda x: x[1])
    area = lens.sigma(lambda x, nu: x[1])
    reports.append(IdentityReport("R_formula", N * vol / area, R, lens.take_error()))

    # X^u flux over the whole boundary against N int x_N
    def xu_flux(x, nu):
        return x[1] * (grad(x) @ nu) - u(x) * nu[1]

    flux = lens.sigma(xu_flux) + lens.t_patch(xu_flux)
    lens.take_error()
    vol = lens.volume(lambda x: x[1])
    reports.append(IdentityReport("Xu_closure", flux, N * vol, lens.take_error()))
    return reports


def lens_volume(N: int, R: float, azimuth=None, tol: float = 1e-11) -> float:
    """Volume of the symmetric lens by the same adaptive quadrature."""
    z = make_symmetric_cap(N, R, azimuth).z0
    return _LensIntegrator(N, z, R, tol).volume(lambda x: 1.0)


def lens_moment(N: int, R: float, azimuth=None, tol: float = 1e-11) -> float:
    """``int x_N`` over the symmetric lens."""
    z = make_symmetric_cap(N, R, azimuth).z0
    return _LensIntegrator(N, z, R, tol).volume(lambda x: x[1])
