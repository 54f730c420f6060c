import numpy as np
import pytest

from fracmem.errors import SingularGramianError
from fracmem.fraccalc import TimeGrid
from fracmem.steering import COND_LIMIT, SteeringProblem, gramian, optimal_control
from fracmem.system import Constant, FracSystem

SUITE_SEED = 2024
SUITE_SIZE = 50

# criterion number -> (passed, detail), filled by the acceptance tests
ACCEPTANCE = {}


def record(number: int, passed: bool, detail: str) -> None:
    ACCEPTANCE[number] = (bool(passed), detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")


def random_problem(rng, N):
    """One draw of the random suite: n <= 4, m <= n+1, entries in [-1, 1], T = 1."""
    n = int(rng.integers(1, 5))
    m = int(rng.integers(1, n + 2))
    A = rng.uniform(-1, 1, (n, n))
    B = rng.uniform(-1, 1, (n, m))
    alpha = float(rng.choice([0.3, 0.5, 0.7, 1.0]))
    beta = float(rng.choice([1.0 - alpha, 1.0]))
    a = rng.uniform(-1, 1, n)
    b = rng.uniform(-1, 1, n)
    sys = FracSystem(A, B, alpha, Constant(a))
    return SteeringProblem(sys, beta, 1.0, b, TimeGrid(1.0, N))


def with_grid(p: SteeringProblem, N: int) -> SteeringProblem:
    return SteeringProblem(p.sys, p.beta, p.T, p.b, TimeGrid(p.T, N), p.allow_low_beta)


@pytest.fixture(scope="session")
def steering_suite():
    """50 seeded random problems with a numerically nonsingular Gramian.

    Each entry holds the problem at N = 4096 and the optimal-control results
    at N = 4096 and N = 8192. Draws with a singular Gramian are skipped.
    """
    rng = np.random.default_rng(SUITE_SEED)
    suite = []
    skipped = 0
    while len(suite) < SUITE_SIZE:
        p = random_problem(rng, 4096)
        G = gramian(p)
        if not G.condition_estimate <= COND_LIMIT:
            skipped += 1
            continue
        try:
            coarse = optimal_control(p)
            fine = optimal_control(with_grid(p, 8192))
        except SingularGramianError:
            skipped += 1
            continue
        suite.append({"problem": p, "gramian": G, "coarse": coarse, "fine": fine})
    return {"entries": suite, "skipped": skipped}
