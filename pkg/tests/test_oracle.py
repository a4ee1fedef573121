import json
import math

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st

from lens_torsion import oracle
from lens_torsion.geometry import GeometryError

# Frozen with 30-digit mpmath quadrature in Cartesian (N = 2) and cylindrical
# (N = 3) coordinates, independent of the polar parametrisation used by the
# oracle.  On the symmetric lens P = R^2 / 2, so the Pohozaev side is
# N R^2 / 2 times the first moment and the X^u flux is N times it.
LENS_VOLUME = {
    (2, 1.0): 0.57079632679489661923,
    (2, 0.5): 0.24043478844932874197,
    (3, 1.0): 0.48638775632108577877,
    (3, 0.5): 0.13166982536278157101,
}
LENS_MOMENT = {
    (2, 1.0): 0.40361395335304403735,
    (2, 0.5): 0.19765407539867518708,
    (3, 1.0): 0.34392808078074979929,
    (3, 0.5): 0.10944104233395899414,
}
POHOZAEV = {
    (2, 1.0): 0.40361395335304403735,
    (2, 0.5): 0.049413518849668796769,
    (3, 1.0): 0.51589212117112469894,
    (3, 0.5): 0.041040390875234622802,
}
CASES = sorted(LENS_MOMENT)


@pytest.fixture(scope="module")
def reports():
    return {case: {r.name: r for r in oracle.oracle_identity_report(*case)} for case in CASES}


def test_two_dimensional_volume_closed_form():
    assert LENS_VOLUME[(2, 1.0)] == pytest.approx(math.pi / 2 - 1, abs=1e-15)
    assert LENS_MOMENT[(2, 1.0)] == pytest.approx(math.sqrt(2) * (math.pi / 4 - 0.5), abs=1e-15)


@pytest.mark.parametrize("case", CASES)
def test_volume_and_moment(case):
    assert oracle.lens_volume(*case) == pytest.approx(LENS_VOLUME[case], abs=1e-12)
    assert oracle.lens_moment(*case) == pytest.approx(LENS_MOMENT[case], abs=1e-12)


@pytest.mark.parametrize("case", CASES)
def test_pohozaev_frozen(reports, case):
    r = reports[case]["pohozaev"]
    assert r.lhs == pytest.approx(POHOZAEV[case], abs=1e-12)
    assert r.rhs == pytest.approx(POHOZAEV[case], abs=1e-12)


@pytest.mark.parametrize("case", CASES)
def test_all_identities_close(reports, case):
    for r in reports[case].values():
        assert r.residual <= 1e-9, r.name
        assert r.quad_error_estimate < 1e-9


@pytest.mark.parametrize("case", CASES)
def test_r_formula_and_flux(reports, case):
    N, R = case
    assert reports[case]["R_formula"].lhs == pytest.approx(R, abs=1e-12)
    assert reports[case]["Xu_closure"].lhs == pytest.approx(N * LENS_MOMENT[case], abs=1e-12)


def test_fundamental_both_sides_vanish(reports):
    # the exact Hessian is the identity, so the traceless part is zero and the
    # right-hand side must vanish for every c on the symmetric lens
    for case in CASES:
        for name in ("fundamental_c=R", "fundamental_c=0"):
            r = reports[case][name]
            assert r.lhs == 0.0 and abs(r.rhs) < 1e-14


def test_tilted_cap():
    a = {r.name: r.lhs for r in oracle.oracle_identity_report(2, 1.0)}
    # cap centre tilted away from the vertical changes x_N-weighted integrals
    b = {r.name: r for r in oracle.oracle_identity_report(2, 1.0, azimuth=1.3)}
    assert b["R_formula"].lhs == pytest.approx(1.0, abs=1e-11)
    assert b["pohozaev"].residual < 1e-10
    assert b["pohozaev"].lhs != pytest.approx(a["pohozaev"], abs=1e-6)


def test_json_keys(reports):
    doc = json.loads(oracle.reports_to_json(reports[(2, 1.0)].values()))
    assert {"identity", "lhs", "rhs", "residual", "quad_error_estimate"} <= set(doc[0])


def test_killing_field():
    x = np.array([[0.3, 0.4], [0.0, 1.0]])
    want = np.array([[0.4 * 0.3, 0.4 * 0.4 - 0.5 * 1.25], [0.0, 1.0 - 1.0]])
    assert np.allclose(oracle.killing_field(x), want, atol=1e-15)
    with pytest.raises(ValueError):
        oracle.killing_field(x, N=3)


@settings(max_examples=40, deadline=None)
@given(st.floats(0.2, 4.0), st.floats(1.0, 2.1))
def test_exact_solution_certifies(R, azimuth):
    # admissible caps keep the horizontal part of z inside the unit ball
    assume(math.sqrt(1 + R * R) * abs(math.cos(azimuth)) <= 1.0)
    sol = oracle.exact_solution(2, R, azimuth)
    cert = sol.certify(n=200)
    assert cert["passed"]
    assert sol.laplacian() == 2.0


def test_exact_solution_three_dimensions():
    sol = oracle.exact_solution(3, 0.7)
    assert sol.laplacian() == 3.0 and sol.certify()["passed"]


def test_oracle_rejects_tilted_three_dimensional_cap():
    with pytest.raises(GeometryError):
        oracle.oracle_identity_report(3, 1.0, azimuth=[0.3, 0.0, 1.0])


def test_oracle_rejects_four_dimensions():
    with pytest.raises(GeometryError):
        oracle.oracle_identity_report(4, 1.0)
