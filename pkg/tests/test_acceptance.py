"""End-to-end acceptance checks, one test per criterion.

Each test records a PASS/FAIL line that the conftest hook prints in the
terminal summary.  Run this file alone with ``python tests/test_acceptance.py``
or ``pytest tests/test_acceptance.py``.
"""
import math
import time

import numpy as np
import pytest

from lens_torsion import fem
from lens_torsion import geometry as geo
from lens_torsion import identities as ids
from lens_torsion.mesh import fsum, refined, triangulate, triangulate_polygon, volume_quadrature
from lens_torsion.oracle import oracle_identity_report
from lens_torsion.stability import LEMMA_CHECKS

SQRT2 = math.sqrt(2.0)
Z = np.array([0.0, SQRT2])


def exact(p):
    d = p - Z
    return 0.5 * (np.sum(d * d, axis=-1) - 1.0)


def l2_error(field) -> float:
    q = volume_quadrature(field.mesh)
    diff = field.quad_values - exact(q.points.reshape(-1, 2)).reshape(q.weights.shape)
    return math.sqrt(fsum(diff**2 * q.weights))


@pytest.fixture(scope="module")
def lens_levels():
    lens = geo.make_symmetric_cap(2, 1.0)
    return [fem.solve_mesh(m) for m in refined(triangulate(lens, 0.1), 3)]


def test_criterion_1_oracle_identities(record_criterion):
    start = time.perf_counter()
    worst = 0.0
    for case in ((2, 1.0), (2, 0.5), (3, 1.0), (3, 0.5)):
        reports = {r.name: r for r in oracle_identity_report(*case)}
        for name in ("pohozaev", "fundamental_c=R", "R_formula"):
            worst = max(worst, reports[name].residual)
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-8 and elapsed <= 5.0
    record_criterion(1, ok, f"worst residual {worst:.2e} (<= 1e-8), {elapsed:.2f} s (<= 5 s)")
    assert ok


def test_criterion_2_rigid_reproduction(record_criterion, lens_levels):
    l2 = [l2_error(f) for f in lens_levels]
    orders = [math.log2(l2[i] / l2[i + 1]) for i in range(len(l2) - 1)]
    f = lens_levels[-1]
    nodal = float(np.abs(f.coef - exact(f.space.nodes)).max())
    ok = all(l2[i + 1] < l2[i] for i in range(len(l2) - 1)) and min(orders) >= 1.8 and nodal <= 1e-4
    record_criterion(2, ok, f"L2 orders {', '.join(f'{o:.2f}' for o in orders)} (>= 1.8), "
                            f"max nodal error {nodal:.2e} (<= 1e-4)")
    assert ok


def test_criterion_3_fundamental_identity_perturbed(record_criterion):
    spec = geo.make_perturbed_domain(geo.make_symmetric_cap(2, 1.0), 0.1)
    rel = [ids.fundamental_report(fem.solve_mesh(m)).relative for m in refined(triangulate(spec, 0.1), 3)]
    order = math.log2(rel[2] / rel[3])
    ok = rel[2] <= 0.05 and rel[3] < rel[2] and order >= 0.9
    record_criterion(3, ok, f"relative residuals {', '.join(f'{r:.2%}' for r in rel)}; "
                            f"level 2 {rel[2]:.2%} (<= 5%), last order {order:.2f} (>= 0.9)")
    assert ok


def test_criterion_4_R_and_z(record_criterion, lens_levels):
    f = lens_levels[-1]
    R = ids.compute_R(f)
    cz = ids.compute_z(f)
    disc = [ids.compute_z(g).discrepancy for g in lens_levels]
    ratios = [disc[i] / disc[i + 1] for i in range(len(disc) - 1)]
    ok = (abs(R - 1) <= 1e-3 and np.linalg.norm(cz.z - Z) <= 1e-3
          and all(3.0 <= r <= 5.0 for r in ratios))
    record_criterion(4, ok, f"|R-1| {abs(R - 1):.1e}, |z-z0| {np.linalg.norm(cz.z - Z):.1e}, "
                            f"z discrepancy shrink {', '.join(f'{r:.2f}' for r in ratios)} (about 4)")
    assert ok


def test_criterion_5_lemma_certificates(record_criterion, default_sweep):
    sweep, _, _ = default_sweep
    failures = [(r.eps, name) for r in sweep.records for name in LEMMA_CHECKS
                if not r.checks.get(name, False)]
    ok = all(r.ok for r in sweep.records) and not failures
    record_criterion(5, ok, f"{len(sweep.records)} sweep instances x {len(LEMMA_CHECKS)} checks, "
                            f"{len(failures)} failures")
    assert ok, failures


def test_criterion_6_stability_sweep(record_criterion, default_sweep):
    sweep, certs, elapsed = default_sweep
    recs = sweep.records
    d = [r.deficit for r in recs]
    g = [r.gap for r in recs]
    eps = [r.eps for r in recs]
    spacing = np.diff(np.log(eps))
    cert = certs["T1.1"]
    ok = (len(recs) == 6 and eps[0] == pytest.approx(0.005) and eps[-1] == pytest.approx(0.16)
          and np.allclose(spacing, spacing[0])
          and all(r.m > 0 for r in recs)
          and d == sorted(d) and g == sorted(g)
          and d[0] <= 10 * sweep.deficit_floor
          and cert.verdict == "PASS" and cert.slope is not None and cert.slope >= 0.45
          and elapsed <= 600)
    record_criterion(6, ok, f"T1.1 {cert.verdict}, c {cert.c_min:.4g} (refined {cert.c_refined:.4g}), "
                            f"slope {cert.slope:.3f} (>= 0.45), floor {sweep.deficit_floor:.2e}, "
                            f"{elapsed:.0f} s (<= 600 s)")
    assert ok


def test_criterion_7_general_stability(record_criterion, default_sweep):
    _, certs, _ = default_sweep
    cert = certs["T4.8"]
    ok = cert.verdict == "PASS" and math.isfinite(cert.c_min) and cert.exponent == pytest.approx(1 / 3.2)
    record_criterion(7, ok, f"T4.8 {cert.verdict}, exponent {cert.exponent:.4f}, "
                            f"c {cert.c_min:.4g} (refined {cert.c_refined:.4g})")
    assert ok


def test_criterion_8_geometry_suite(record_criterion):
    problems = []
    for args, want in (((math.pi / 6, 1.0, 10.0), 1 / 6), ((math.pi / 2, 1.0, 10.0), 0.25),
                       ((math.pi / 6, 1.0, 0.1), 0.1)):
        if abs(geo.sigma0(*args) - want) > 1e-12:
            problems.append(f"sigma0{args}")
    if abs(geo.john_constant_bound(math.pi / 2, 1.0, 2.0, 1.0) - 8.0) > 1e-12:
        problems.append("john bound")
    if not geo.john_constant_bound(0.0, 1.0, 2.0, 1.0) == math.inf:
        problems.append("john bound limit")

    base = geo.make_symmetric_cap(2, 1.0)
    lenses = {"R=1": (base, 0.1), "R=1/2": (geo.make_symmetric_cap(2, 0.5), 0.05),
              "eps=0.1": (geo.make_perturbed_domain(base, 0.1), 0.1)}
    for name, (spec, h) in lenses.items():
        s0 = geo.sigma0(spec.cone_theta, spec.cone_a)
        mesh = refined(triangulate(spec, h), 1)[-1]
        for s in np.linspace(0.0, s0, 6):
            if not geo.parallel_set_connected(mesh, s).connected:
                problems.append(f"{name} parallel set at sigma={s:.4g}")
        if not geo.cone_condition_check(geo.boundary_polyline(spec, 128), spec.cone_theta, spec.cone_a).passed:
            problems.append(f"{name} cone check")

    dumbbell = triangulate_polygon(geo.dumbbell_polyline(0.05, 0.5), 0.02)
    for s in (0.06, 0.1, 0.2):
        if geo.parallel_set_connected(dumbbell, s).components != 2:
            problems.append(f"dumbbell at sigma={s}")
    slit = geo.cone_condition_check(geo.slit_square_polyline(), math.pi / 6, 0.1)
    if slit.passed or not slit.witness:
        problems.append("slit cone check")

    ok = not problems
    record_criterion(8, ok, "sigma0, John bound, lens parallel sets, dumbbell split, cone checks"
                     + ("" if ok else f"; failing: {problems}"))
    assert ok, problems


if __name__ == "__main__":
    import sys
    sys.exit(pytest.main([__file__, "-q"]))
