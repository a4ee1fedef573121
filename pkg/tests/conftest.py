import time

import pytest

# criterion number -> (passed, one-line detail); filled by test_acceptance.py
ACCEPTANCE_RESULTS: dict[int, tuple[bool, str]] = {}


@pytest.fixture
def record_criterion():
    def record(number: int, passed: bool, detail: str):
        ACCEPTANCE_RESULTS[number] = (bool(passed), detail)
    return record


@pytest.fixture(scope="session")
def default_sweep():
    """The six-amplitude sweep shared by the lemma and theorem criteria."""
    from lens_torsion.cli import DEFAULT_EPS
    from lens_torsion.geometry import make_symmetric_cap
    from lens_torsion.stability import certify_sweep, run_sweep

    start = time.perf_counter()
    sweep = run_sweep(make_symmetric_cap(2, 1.0), DEFAULT_EPS, h_target=0.1, refinements=3)
    certs = {c.theorem: c for c in certify_sweep(sweep)}
    return sweep, certs, time.perf_counter() - start


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_RESULTS):
        passed, detail = ACCEPTANCE_RESULTS[number]
        terminalreporter.write_line(f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}")
