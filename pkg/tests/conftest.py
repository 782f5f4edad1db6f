import numpy as np
import pytest

from nplcm.model import ModelParams


def random_params(rng, J=5, K=2, other=False):
    """Random interior parameter set; rates kept away from 0 and 1."""
    L = J + int(other)
    return ModelParams(pi=rng.dirichlet(np.ones(L)),
                       theta=rng.uniform(0.05, 0.95, (J, K)),
                       psi=rng.uniform(0.05, 0.95, (J, K)),
                       eta=rng.dirichlet(np.ones(K)), nu=rng.dirichlet(np.ones(K)))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


VERDICTS = pytest.StashKey[list]()


@pytest.fixture
def verdict(request):
    """Record one PASS/FAIL line for an acceptance criterion and return the outcome."""
    lines = request.config.stash.setdefault(VERDICTS, [])

    def record(criterion, ok, detail):
        line = f"{'PASS' if ok else 'FAIL'} criterion {criterion}: {detail}"
        lines.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(VERDICTS, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
