"""Shared fixtures and the acceptance summary."""
import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from stochastic_inertia.dynamics import SystemSpec, sample_trajectory

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

ACCEPTANCE_LINES = []

# property-suite criteria and the unit tests that establish them
PROPERTY_SUITE = {
    "row-stochastic D and P (1e-12)": ["test_kernel.py::test_diffusion_matrix_rows_stochastic"],
    "power-series oracle for theta on <= 5 states (1e-8)": ["test_chain.py::test_escape_steps_match_power_series"],
    "theta0 = dt x deterministic step count": ["test_chain.py::test_small_noise_escape_equals_step_count",
                                               "test_chain.py::test_deterministic_escape_steps"],
    "solver paths agree (1e-6)": ["test_chain.py::test_solver_paths_agree"],
    "stationary residual (1e-10)": ["test_chain.py::test_stationary_distribution",
                                    "test_chain.py::test_stationary_on_periodic_chain"],
    "entry distribution sums to 1": ["test_chain.py::test_entry_distribution_sums_to_one"],
    "oracle vs nested quadrature (1e-4)": ["test_oracle.py::test_matches_nested_quadrature"],
    "ou_step exact variance": ["test_dynamics.py::test_ou_step_exact_variance"],
    "cdv_step order slope in [1.8, 2.2]": ["test_dynamics.py::test_cdv_step_second_order"],
    "sparse vs brute-force neighbour pairs": ["test_kernel.py::test_neighbor_pairs_match_brute_force"],
}
_OUTCOMES = {}


def report(name: str, ok: bool, detail: str = "") -> bool:
    """Record and print one PASS/FAIL line for an acceptance criterion."""
    line = f"{'PASS' if ok else 'FAIL'} {name}" + (f": {detail}" if detail else "")
    ACCEPTANCE_LINES.append(line)
    print(line, flush=True)
    return ok


def info(text: str) -> None:
    """Record and print an informational (non-gating) line."""
    line = f"INFO {text}"
    ACCEPTANCE_LINES.append(line)
    print(line, flush=True)


def pytest_runtest_logreport(report):
    key = report.nodeid.split("/")[-1].split("[")[0]  # parametrized cases share one key
    if report.failed:
        _OUTCOMES[key] = "failed"
    elif report.when == "call" or report.skipped:
        _OUTCOMES.setdefault(key, report.outcome)


def _property_lines():
    lines, all_ok = [], True
    for name, tests in PROPERTY_SUITE.items():
        got = [_OUTCOMES.get(t) for t in tests]
        if all(g is None for g in got):
            continue
        ok = all(g == "passed" for g in got)
        all_ok &= ok
        lines.append(f"{'PASS' if ok else 'FAIL'} property: {name} ({', '.join(t.split('::')[1] for t in tests)})")
    if lines:
        lines.append(f"{'PASS' if all_ok else 'FAIL'} property suites: {len(lines)} criteria")
    return lines


def pytest_terminal_summary(terminalreporter):
    lines = ACCEPTANCE_LINES + _property_lines()
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def toy1d_small():
    """1500-point 1D toy trajectory with a few reinsertions."""
    return sample_trajectory(SystemSpec.toy1d(), [1e-4], 1500, 0.05, seed=3)


@pytest.fixture(scope="session")
def toy3d_small():
    return sample_trajectory(SystemSpec.toy3d(), [5e-2, 0.0, 0.0], 1200, 0.1, seed=4)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
