import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lens_torsion import fem
from lens_torsion import geometry as geo
from lens_torsion import identities as ids
from lens_torsion.mesh import refined, triangulate

SQRT2 = math.sqrt(2.0)
Z = np.array([0.0, SQRT2])


def exact(p):
    d = p - Z
    return 0.5 * (np.sum(d * d, axis=-1) - 1.0)


@pytest.fixture(scope="module")
def lens():
    return geo.make_symmetric_cap(2, 1.0)


@pytest.fixture(scope="module")
def lens_fields(lens):
    return [fem.solve_mesh(m) for m in refined(triangulate(lens, 0.1), 2)]


@pytest.fixture(scope="module")
def bumped_fields(lens):
    spec = geo.make_perturbed_domain(lens, 0.1)
    return [fem.solve_mesh(m) for m in refined(triangulate(spec, 0.1), 2)]


@pytest.fixture(scope="module")
def interpolated(lens_fields):
    return fem.interpolate(lens_fields[0].mesh, exact)


# -- the exact quadratic on a discrete lens ----------------------------------


def test_interpolant_has_rigid_hessian(interpolated):
    assert np.abs(interpolated.hessians - np.eye(2)).max() < 1e-9
    for tau in ids.TAUS:
        assert ids.weighted_hessian_norm(interpolated, tau=tau) < 1e-8
    assert np.abs(ids.hessian_deficit(interpolated)).max() < 1e-9


def test_interpolant_centre_is_exact(interpolated):
    cz = ids.compute_z(interpolated)
    assert np.allclose(cz.z_volume, Z, atol=1e-12)
    assert np.abs(ids.mean_gradient_h(interpolated, Z)).max() < 1e-12
    assert ids.grad_h_inf(interpolated, Z) < 1e-9


def test_interpolant_gap_vanishes(interpolated):
    hq = ids.h_quantities(interpolated, Z)
    assert hq.gap < 1e-12 and hq.osc_h < 1e-12 and hq.holds


# -- rigidity on the symmetric lens -------------------------------------------


def test_R_converges_to_one(lens_fields):
    errs = [abs(ids.compute_R(f) - 1.0) for f in lens_fields]
    assert errs[-1] < 5e-4
    assert errs[0] / errs[1] > 3.5 and errs[1] / errs[2] > 3.5


def test_z_converges(lens_fields):
    errs = [np.linalg.norm(ids.compute_z(f).z - Z) for f in lens_fields]
    assert errs[-1] < 1e-3
    disc = [ids.compute_z(f).discrepancy for f in lens_fields]
    assert disc[-1] < 2e-5
    assert all(3.5 < disc[i] / disc[i + 1] < 4.5 for i in range(2))


def test_deficit_first_order(lens_fields):
    d = [ids.deficit_norm(f, ids.compute_R(f)) for f in lens_fields]
    assert d[-1] < 7e-3
    assert all(1.8 < d[i] / d[i + 1] < 2.3 for i in range(2))


def test_z_sigma_agrees(lens_fields):
    f = lens_fields[-1]
    zs = [ids.compute_z_sigma(f, s) for s in (0.0, 0.02, 0.05)]
    for z in zs:
        assert np.linalg.norm(z - Z) < 2e-3


def test_z_sigma_empty_raises(lens_fields):
    with pytest.raises(ids.IdentityError):
        ids.compute_z_sigma(lens_fields[0], 5.0)


def test_all_checks_pass_on_lens(lens_fields):
    for f in lens_fields:
        cert = ids.certificate(f)
        assert cert["passed"], [c for c in cert["checks"] if not c["passed"]]


def test_symmetric_lens_has_inner_radius_checks(lens_fields):
    cert = ids.certificate(lens_fields[0])
    applicable = {c["name"] for c in cert["checks"] if c["applicable"]}
    assert {"distance_bound_linear", "hessian_bound_sphere", "hessian_bound_height_sphere"} <= applicable


# -- identities on a perturbed lens --------------------------------------------


def test_pohozaev_converges(bumped_fields):
    rel = [ids.pohozaev_report(f).relative for f in bumped_fields]
    assert rel[-1] < 5e-3
    assert rel[0] > rel[1] > rel[2]


def test_fundamental_converges(bumped_fields):
    reps = [ids.fundamental_report(f) for f in bumped_fields]
    rel = [r.relative for r in reps]
    assert rel[1] <= 0.05 and rel[2] < 0.01
    assert all(r.note == "c=R" for r in reps)
    # the volume side is nonnegative and stabilises
    assert all(r.lhs > 0 for r in reps)
    assert abs(reps[2].lhs - reps[1].lhs) < 1e-3


def test_fundamental_independent_of_c(bumped_fields):
    f = bumped_fields[-1]
    with_r = ids.fundamental_report(f)
    with_zero = ids.fundamental_report(f, 0.0)
    assert with_r.lhs == with_zero.lhs
    assert abs(with_r.rhs - with_zero.rhs) < 2e-3
    vals = [abs(ids.c_independence_integral(f)) for f in bumped_fields]
    assert vals[0] > vals[1] > vals[2]


def test_perturbed_gap_bounds(bumped_fields):
    for f in bumped_fields:
        z = ids.compute_z(f).z
        hq = ids.h_quantities(f, z)
        assert hq.holds
        assert hq.osc_h == pytest.approx(0.5 * (hq.rho_e**2 - hq.rho_i**2), rel=1e-12)
        assert 0.09 < hq.gap < 0.11
        assert hq.gap <= hq.bound_cone


def test_perturbed_certificate_passes(bumped_fields):
    cert = ids.certificate(bumped_fields[1])
    assert cert["passed"]
    names = {c["name"]: c for c in cert["checks"]}
    # the perturbed domain carries no analytic interior sphere radius
    assert not names["distance_bound_linear"]["applicable"]
    assert not names["hessian_bound_sphere"]["applicable"]
    assert names["hessian_bound_cone"]["applicable"] and names["hessian_bound_cone"]["passed"]


def test_certificate_json_round_trip(bumped_fields):
    cert = ids.certificate(bumped_fields[0])
    doc = json.loads(ids.certificate_json(cert))
    assert doc["passed"] == cert["passed"]
    assert {"h", "quantities", "reports", "checks", "tolerances"} <= set(doc)


def test_distance_bound_with_exact_distance(lens_fields):
    checks = ids.lemma42_check(lens_fields[-1], exact_delta=True)
    assert all(c.passed for c in checks)


def test_distance_bound_catches_wrong_sign(lens_fields):
    flipped = lens_fields[0].scaled(-1.0)
    (quadratic, _) = ids.lemma42_check(flipped)
    assert not quadratic.passed and quadratic.detail["violations"] > 0


def test_scaled_solution_has_large_weighted_norm(lens_fields):
    # doubling u keeps Sigma but doubles the Hessian, so Hess h is far from zero
    f = lens_fields[0].scaled(2.0)
    assert ids.weighted_hessian_norm(f, tau=1.5) > 10 * ids.weighted_hessian_norm(lens_fields[0], tau=1.5)


def test_mean_value_check(lens_fields):
    f = lens_fields[0]
    assert ids.mean_value_check(f, ids.compute_z(f).z).passed


# -- exponent helpers -------------------------------------------------------


@pytest.mark.parametrize("N,tau,want", [(2, 1.0, 1.0), (2, 0.5, 2.0), (2, 1.5, 2 / 3), (3, 0.5, 1.0),
                                         (4, 1.0, 0.5)])
def test_kappa(N, tau, want):
    assert ids.kappa(N, tau) == pytest.approx(want, abs=1e-15)


@pytest.mark.parametrize("N,tau", [(1, 1.0), (2, 0.0), (2, -1.0)])
def test_kappa_rejects(N, tau):
    with pytest.raises(ValueError):
        ids.kappa(N, tau)


@pytest.mark.parametrize("N,p,q,want", [(2, 1, math.inf, 0.5), (2, 2, 4, 1.0), (3, 2, 6, 0.5),
                                         (3, 1, 4, 1 / 9), (2, 1, 2, 0.0)])
def test_alpha_pq(N, p, q, want):
    assert ids.alpha_pq(N, p, q) == pytest.approx(want, abs=1e-15)


@pytest.mark.parametrize("N,p,q", [(2, 3, 4), (2, 0.5, 4), (2, 2, 2), (1, 1, 2)])
def test_alpha_pq_rejects(N, p, q):
    with pytest.raises(ValueError):
        ids.alpha_pq(N, p, q)


@settings(max_examples=80, deadline=None)
@given(st.integers(2, 6), st.floats(1.0, 2.0), st.floats(7.0, 1e6))
def test_alpha_pq_tends_to_limit(N, p, q):
    a = ids.alpha_pq(N, p, q)
    assert a <= p / N + 1e-15
    assert a <= ids.alpha_pq(N, p, 2 * q) + 1e-15
