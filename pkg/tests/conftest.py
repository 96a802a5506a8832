import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from superpatch.curvature import (build_segmentation_instance, squared_data_term, two_by_two_costs,
                                  two_by_two_pairwise_graph)
from superpatch.trws import SolverOptions, run, solve_pairwise

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def jit_warm():
    """Compile the message-passing kernels once so timed tests measure solving only."""
    data = squared_data_term(np.eye(4))
    sg = build_segmentation_instance(data, 0.5, two_by_two_costs()).super_graph
    run(sg, SolverOptions(max_iters=3))
    run(sg, SolverOptions(max_iters=3, algorithm="LBP"))
    solve_pairwise(two_by_two_pairwise_graph(data, 0.5), SolverOptions(max_iters=3))
    return True


def random_instance(rng, h=4, w=4, lam=0.5):
    """Noisy binary image turned into a squared data term."""
    img = (rng.random((h, w)) < 0.5).astype(float) + rng.normal(0, 0.4, (h, w))
    return squared_data_term(img), lam


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def report_criterion():
    """Record one pass/fail line for an acceptance criterion, printed in the session summary."""
    def record(number: int, ok: bool, detail: str):
        ACCEPTANCE_LINES.append(f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}")
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
