"""Perturbation sweeps, log-log exponent fits and theorem-shape certificates.

A sweep solves the torsion problem on a one-parameter family of perturbed
lenses and records, for each amplitude, the deficit ``||u_nu^2 - R^2||_1``
and the gap ``rho_e - rho_i``.  The stability theorems bound the gap by
``c * shape(deficit)``; :func:`check_theorem_bound` reports the smallest such
``c`` over the family and whether it stays put when the smallest-amplitude
records are recomputed on a finer mesh.
"""
from __future__ import annotations

import csv
import io
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field as dc_field, replace

import numpy as np

from .fem import SolverError, solve_mesh
from .geometry import (DomainSpec, GeometryError, PerturbationProfile, boundary_polyline,
                       cone_condition_check, make_perturbed_domain)
from .identities import certificate, stability_quantities
from .mesh import MeshError, refined, triangulate

CSV_HEADER = ["eps", "h", "R", "z1", "z2", "deficit", "gap", "osc_h", "L", "m",
              "w_half", "w_one", "w_threehalf", "cert"]
THEOREMS = ("T1.1", "T1.2", "T1.3", "T4.8")
LEMMA_CHECKS = ("distance_bound_quadratic", "hessian_bound_cone", "grad_h_bound")


class StabilityError(ValueError):
    pass


@dataclass
class SweepRecord:
    eps: float
    h: float
    R: float
    z: tuple[float, float]
    deficit: float
    gap: float
    osc_h: float
    L: float
    m: float
    w_half: float
    w_one: float
    w_threehalf: float
    cert: bool
    cone_ok: bool | None = None
    inner_radius: float | None = None
    level: int = 0
    checks: dict = dc_field(default_factory=dict)
    diagnostic: str = ""

    @property
    def ok(self) -> bool:
        return not self.diagnostic

    def csv_row(self) -> list[str]:
        vals = [self.eps, self.h, self.R, self.z[0], self.z[1], self.deficit, self.gap, self.osc_h,
                self.L, self.m, self.w_half, self.w_one, self.w_threehalf]
        return [repr(float(v)) for v in vals] + ["PASS" if self.cert else "FAIL"]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["z"] = list(self.z)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SweepRecord":
        d = dict(d)
        d["z"] = tuple(d["z"])
        return cls(**d)


def failed_record(eps: float, message: str) -> SweepRecord:
    nan = float("nan")
    return SweepRecord(eps, nan, nan, (nan, nan), nan, nan, nan, nan, nan, nan, nan, nan, False,
                       diagnostic=message)


def records_to_csv(records) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in records:
        w.writerow(r.csv_row())
    return buf.getvalue()


def records_from_csv(text: str) -> list[SweepRecord]:
    rows = list(csv.reader(io.StringIO(text)))
    if rows[0] != CSV_HEADER:
        raise StabilityError(f"unexpected CSV header {rows[0]}")
    out = []
    for row in rows[1:]:
        v = [float(t) for t in row[:-1]]
        out.append(SweepRecord(v[0], v[1], v[2], (v[3], v[4]), *v[5:13], cert=row[-1] == "PASS"))
    return out


def records_to_json(records) -> str:
    return json.dumps([r.to_dict() for r in records], indent=2, sort_keys=True)


def records_from_json(text: str) -> list[SweepRecord]:
    return [SweepRecord.from_dict(d) for d in json.loads(text)]


# ---------------------------------------------------------------------------
# one sweep point


@dataclass(frozen=True)
class MeshPolicy:
    h_target: float = 0.1
    refinements: int = 3
    cone_segments: int = 128  # polyline resolution for the cone certificate


def evaluate_domain(spec: DomainSpec, policy: MeshPolicy, *, check_cone: bool = True) -> SweepRecord:
    """Solve on ``spec`` under ``policy`` and collect the stability quantities."""
    eps = spec.epsilon
    try:
        mesh = refined(triangulate(spec, policy.h_target), policy.refinements)[-1]
        field = solve_mesh(mesh)
    except (GeometryError, MeshError, SolverError) as exc:
        return failed_record(eps, f"{type(exc).__name__}: {exc}")
    cert = certificate(field)
    q = cert["quantities"]
    w = q["weighted_norms"]
    cone = None
    if check_cone:
        cone = cone_condition_check(boundary_polyline(spec, policy.cone_segments),
                                    spec.cone_theta, spec.cone_a).passed
    checks = {c["name"]: bool(c["passed"]) for c in cert["checks"] if c["applicable"]}
    return SweepRecord(
        eps=eps, h=q["h"], R=q["R"], z=tuple(q["z"]), deficit=q["deficit"], gap=q["gap"],
        osc_h=q["osc_h"], L=q["L"], m=q["m"], w_half=w["0.5"], w_one=w["1.0"], w_threehalf=w["1.5"],
        cert=bool(cert["passed"]), cone_ok=cone, inner_radius=spec.inner_radius,
        level=policy.refinements, checks=checks,
        diagnostic="; ".join(field.diagnostics))


def _evaluate_job(args):
    spec_json, policy, check_cone = args
    return evaluate_domain(DomainSpec.from_json(spec_json), policy, check_cone=check_cone)


def worker_count() -> int:
    try:
        return max(1, int(os.environ.get("LENS_TORSION_THREADS", "1")))
    except ValueError:
        return 1


def _evaluate_many(specs, policy: MeshPolicy, check_cone: bool = True) -> list[SweepRecord]:
    jobs = [(s.to_json(), policy, check_cone) for s in specs]
    n = min(worker_count(), len(jobs))
    if n <= 1:
        return [_evaluate_job(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=n) as pool:
        return list(pool.map(_evaluate_job, jobs))  # map keeps input order


# ---------------------------------------------------------------------------
# sweeps


@dataclass
class Sweep:
    records: list[SweepRecord]
    rigid: SweepRecord
    floor_check: SweepRecord | None
    policy: MeshPolicy
    deficit_floor: float
    gap_floor: float
    base: DomainSpec
    profile: PerturbationProfile | None = None

    def usable(self) -> list[SweepRecord]:
        return [r for r in self.records if r.ok and r.deficit > 10 * self.deficit_floor]

    def to_dict(self) -> dict:
        return {
            "records": [r.to_dict() for r in self.records],
            "rigid": self.rigid.to_dict(),
            "floor_check": None if self.floor_check is None else self.floor_check.to_dict(),
            "policy": asdict(self.policy),
            "deficit_floor": self.deficit_floor,
            "gap_floor": self.gap_floor,
            "base": self.base.to_dict(),
        }


def run_sweep(base: DomainSpec, eps_list, g: PerturbationProfile | None = None, h_target: float = 0.1,
              refinements: int = 3, *, check_cone: bool = True) -> Sweep:
    """Evaluate every amplitude in ``eps_list`` under one mesh policy.

    The noise floor is the larger of the rigid-lens deficit (gap) and the
    change in the smallest-amplitude deficit (gap) under one extra refinement.
    A failed solve is kept as a record with a diagnostic.
    """
    eps_list = sorted(float(e) for e in eps_list)
    if not eps_list:
        raise StabilityError("empty amplitude list")
    policy = MeshPolicy(h_target, refinements)
    specs, early = [], {}
    for e in eps_list:
        try:
            specs.append(make_perturbed_domain(base, e, g))
        except GeometryError as exc:
            early[e] = failed_record(e, f"inadmissible: {exc}")
            specs.append(None)
    todo = [s for s in specs if s is not None]
    done = iter(_evaluate_many(todo + [base], policy, check_cone))
    records = []
    for e, s in zip(eps_list, specs):
        records.append(early[e] if s is None else next(done))
    rigid = next(done)
    floor_check = None
    d_floor, g_floor = rigid.deficit, rigid.gap
    first = next((r for r, s in zip(records, specs) if r.ok and s is not None), None)
    if first is not None:
        fine = replace(policy, refinements=refinements + 1)
        floor_check = evaluate_domain(make_perturbed_domain(base, first.eps, g), fine, check_cone=False)
        if floor_check.ok:
            d_floor = max(d_floor, abs(floor_check.deficit - first.deficit))
            g_floor = max(g_floor, abs(floor_check.gap - first.gap))
    return Sweep(records, rigid, floor_check, policy, d_floor, g_floor, base, g)


# ---------------------------------------------------------------------------
# fits and theorem shapes


@dataclass
class ExponentFit:
    slope: float
    intercept: float
    residual: float
    eps_range: tuple[float, float]
    n: int

    @property
    def constant(self) -> float:
        return math.exp(self.intercept)


def fit_exponent(records, floor: float = 0.0) -> ExponentFit:
    """Least-squares line through ``(log deficit, log gap)`` of the usable records."""
    use = [r for r in records if r.deficit > 10 * floor and r.deficit > 0 and r.gap > 0
           and math.isfinite(r.deficit) and math.isfinite(r.gap)]
    if len(use) < 4:
        raise StabilityError(f"need at least 4 usable records for a fit, have {len(use)}")
    x = np.log([r.deficit for r in use])
    y = np.log([r.gap for r in use])
    A = np.vstack([x, np.ones_like(x)]).T
    (slope, intercept), res, *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = float(np.sqrt(res[0] / len(x))) if res.size else 0.0
    eps = [r.eps for r in use]
    return ExponentFit(float(slope), float(intercept), resid, (min(eps), max(eps)), len(use))


def _log_factor(t):
    t = np.asarray(t, dtype=float)
    with np.errstate(divide="ignore"):
        return np.maximum(np.log(t ** -0.5), 1.0)


def theorem_exponent(theorem: str, N: int = 2, eta: float = 0.1) -> float:
    """Power of the deficit in the theorem's bound (log factors ignored)."""
    if theorem in ("T1.1", "T1.2"):
        return 0.5 if N == 2 else 1.0 / N
    if theorem == "T1.3":
        return 0.5 if N <= 3 else 1.0 / (N - 1)
    if theorem == "T4.8":
        if N == 2:
            if not 0 < eta < 1:
                raise StabilityError("eta must lie in (0, 1)")
            return 1.0 / (3 + 2 * eta)
        return 1.0 / (N + 1)
    raise StabilityError(f"unknown theorem {theorem!r}; expected one of {THEOREMS}")


def theorem_shape(theorem: str, deficit, N: int = 2, eta: float = 0.1):
    """Right-hand side of the theorem with ``c = 1``, as a function of the deficit."""
    t = np.asarray(deficit, dtype=float)
    p = theorem_exponent(theorem, N, eta)
    logged = (theorem in ("T1.1", "T1.2") and N == 2) or (theorem == "T1.3" and N == 3)
    out = t**p
    if logged:
        out = out * _log_factor(t)
    return out


@dataclass
class TheoremCertificate:
    theorem: str
    c_min: float
    slope: float | None
    passed: bool
    verdict: str  # "PASS", "FAIL" or "not applicable"
    exponent: float
    c_refined: float | None = None
    reason: str = ""

    def to_dict(self) -> dict:
        return {"theorem": self.theorem, "c_min": self.c_min, "slope": self.slope, "pass": self.passed,
                "verdict": self.verdict, "exponent": self.exponent, "c_refined": self.c_refined,
                "reason": self.reason}


def _hypotheses(theorem: str, records) -> str:
    """Empty string when the theorem applies to every record, otherwise the reason."""
    for r in records:
        if r.cone_ok is False:
            return f"cone condition fails at eps={r.eps}"
        if theorem in ("T1.1", "T1.3") and not r.m > 0:
            return f"m = {r.m} is not positive at eps={r.eps}"
        if theorem in ("T1.2", "T1.3") and r.inner_radius is None:
            return f"no interior sphere radius at eps={r.eps}"
    return ""


def c_min(records, theorem: str, N: int = 2, eta: float = 0.1) -> float:
    gaps = np.array([r.gap for r in records])
    shapes = theorem_shape(theorem, [r.deficit for r in records], N, eta)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(gaps > 0, gaps / shapes, 0.0)
    return float(ratio.max()) if len(ratio) else float("nan")


def check_theorem_bound(records, theorem: str, params: dict | None = None, *,
                        refined_records=None, floor: float = 0.0) -> TheoremCertificate:
    """Smallest ``c`` with ``gap <= c * shape(deficit)`` over the usable records.

    ``refined_records`` are the two smallest-amplitude usable records recomputed
    one refinement level deeper; the certificate passes when ``c`` is finite,
    the recomputed ``c`` is at most twice the original, and the fitted slope
    is at least 90% of the theorem exponent.
    """
    params = params or {}
    N, eta = params.get("N", 2), params.get("eta", 0.1)
    expo = theorem_exponent(theorem, N, eta)
    use = [r for r in records if r.ok and r.deficit > 10 * floor]
    why = _hypotheses(theorem, use)
    if why:
        return TheoremCertificate(theorem, float("nan"), None, False, "not applicable", expo, reason=why)
    if not use:
        return TheoremCertificate(theorem, float("nan"), None, False, "FAIL", expo,
                                  reason="no record above the noise floor")
    c = c_min(use, theorem, N, eta)
    try:
        slope = fit_exponent(use, 0.0).slope
    except StabilityError:
        slope = None
    c_ref = None
    reasons = []
    if not math.isfinite(c):
        reasons.append("c is not finite")
    if refined_records:
        by_eps = {r.eps: r for r in refined_records if r.ok}
        swapped = [by_eps.get(r.eps, r) for r in use]
        c_ref = c_min(swapped, theorem, N, eta)
        if not c_ref <= 2 * c:
            reasons.append(f"c grows from {c:.4g} to {c_ref:.4g} under refinement")
    else:
        reasons.append("no refined records to test stability of c")
    if slope is None:
        reasons.append("fewer than 4 usable records for a slope")
    elif slope < 0.9 * expo:
        reasons.append(f"slope {slope:.3f} below 0.9 x exponent {expo:.3f}")
    ok = not reasons
    return TheoremCertificate(theorem, c, slope, ok, "PASS" if ok else "FAIL", expo, c_ref, "; ".join(reasons))


def refine_smallest(sweep: Sweep, count: int = 2) -> list[SweepRecord]:
    """Recompute the ``count`` smallest-amplitude usable records one level deeper."""
    use = sweep.usable()[:count]
    fine = replace(sweep.policy, refinements=sweep.policy.refinements + 1)
    specs = [make_perturbed_domain(sweep.base, r.eps, sweep.profile) for r in use]
    return _evaluate_many(specs, fine, check_cone=False)


def certify_sweep(sweep: Sweep, theorems=THEOREMS, params: dict | None = None) -> list[TheoremCertificate]:
    refined_recs = refine_smallest(sweep)
    for r in refined_recs:  # geometry is unchanged, so the cone verdict carries over
        r.cone_ok = next(x.cone_ok for x in sweep.records if x.eps == r.eps)
    return [check_theorem_bound(sweep.records, t, params, refined_records=refined_recs,
                                floor=sweep.deficit_floor) for t in theorems]


def lemma_certificates(records) -> dict:
    """Per record, whether the pointwise and weighted lemma checks held."""
    return {r.eps: {name: r.checks.get(name, False) for name in LEMMA_CHECKS} for r in records}
