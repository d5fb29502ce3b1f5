import itertools

import numpy as np
import pytest

from prenet import FactorParams, sample_covariance

# one line per acceptance criterion, printed after the test session
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


def random_params(rng, p, m, scale=0.8):
    lam = rng.uniform(-scale, scale, size=(p, m))
    psi = rng.uniform(0.2, 1.0, size=p)
    return FactorParams(lam, psi)


def random_cov(rng, p, m, n=200):
    """Sample covariance of n draws from a random m-factor model."""
    truth = random_params(rng, p, m)
    sigma = truth.lam @ truth.lam.T + np.diag(truth.psi)
    x = rng.multivariate_normal(np.zeros(p), sigma, size=n)
    return sample_covariance(x)


def all_column_transforms(m):
    """Every (permutation, sign vector) pair for m columns."""
    for perm in itertools.permutations(range(m)):
        for signs in itertools.product((1.0, -1.0), repeat=m):
            yield perm, np.array(signs)


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)
