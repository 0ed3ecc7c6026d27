"""Shared fixtures and small oracles for the test suite."""

import math

import numpy as np
import pytest

from earlylmc.mixture import Mixture


def phi_cdf(x):
    """Standard normal CDF via erf (independent of scipy)."""
    return 0.5 * (1.0 + math.erf(x / math.sqrt(2.0)))


def random_gaussian_mixture(rng, d, K):
    """Random mixture with full covariances, eigenvalues in [0.5, 2]."""
    means = rng.normal(0.0, 2.0, (K, d))
    covs = []
    for _ in range(K):
        Q, _ = np.linalg.qr(rng.normal(size=(d, d)))
        lam = rng.uniform(0.5, 2.0, d)
        covs.append((Q * lam) @ Q.T)
    w = rng.dirichlet(np.full(K, 3.0))
    w = w / w.sum()
    w[-1] = 1.0 - w[:-1].sum()
    return Mixture.gaussian(means, covs, w)


@pytest.fixture
def two_modes():
    return Mixture.gaussian([[-3.0], [3.0]], [1.0, 1.0], [0.5, 0.5])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# ----------------------------------------------------------------------------
# Acceptance summary
# ----------------------------------------------------------------------------

ACCEPTANCE_LINES: dict = {}


def record_acceptance(key: str, passed: bool, detail: str) -> str:
    """Store and print the one-line verdict of an acceptance criterion."""
    line = f"{key} {'PASS' if passed else 'FAIL'}: {detail}"
    ACCEPTANCE_LINES[key] = line
    print(line)
    return line


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES, key=lambda k: int(k[1:])):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])
