import numpy as np
import pytest

from trunc_poisson.certificate import LyapunovCertificate, minimal_c
from trunc_poisson.markov_model import DtmcModel, build_slotted_queue, build_two_mm1
from trunc_poisson.sets import linear_le, quadratic


class AgeChain(DtmcModel):
    """Climbs deterministically from 0 to ``m``, then renews to 0 with probability ``p`` per step.

    Every path from ``{0..m-1}`` passes through ``m`` before it can return to
    0, which makes it a handy model for truncations that cannot see ``z``.
    """

    name = "age"

    def __init__(self, m: int, p: float):
        self.m, self.p = m, p

    @property
    def params(self):
        return {"m": self.m, "p": self.p}

    def row(self, x):
        (i,) = x
        if i < self.m:
            return [((i + 1,), 1.0)]
        return [((0,), self.p), ((i + 1,), 1.0 - self.p)]

    def reward(self, x):
        return float(x[0])

    def hitting_reward(self, i: int) -> float:
        """``E_i sum_{j < tau(0)} X_j`` for ``i >= 1``."""
        start = max(i, self.m)
        climb = sum(range(i, self.m))
        return climb + start / self.p + (1 - self.p) / self.p ** 2

    def hitting_time(self, i: int) -> float:
        return max(self.m - i, 0) + 1.0 / self.p

    def lyapunov(self, x):
        """Strict drift for the reward ``x`` off ``{0..m-1}``."""
        p = self.p
        return 0.0 if x[0] == 0 else x[0] / p + (1 - p) / p ** 2 + 1.0


def random_chain(n: int, seed: int, density: float = 0.2) -> np.ndarray:
    rng = np.random.default_rng(seed)
    P = rng.random((n, n)) * (rng.random((n, n)) < density)
    P[np.arange(n), (np.arange(n) + 1) % n] += 0.05  # a cycle keeps it irreducible
    return P / P.sum(axis=1, keepdims=True)


@pytest.fixture(scope="session")
def slotted():
    return build_slotted_queue(0.6)


@pytest.fixture(scope="session")
def slotted_certs():
    v = quadratic([2.0])
    K = {(i,) for i in range(10)}
    r = LyapunovCertificate(v, lambda x: float(x[0]), K, 24.456, "r")
    e = LyapunovCertificate(v, lambda x: 1.0, K, 24.456, "e")
    return r, e


@pytest.fixture(scope="session")
def mm1():
    return build_two_mm1(2, 5, 1, 3)


@pytest.fixture(scope="session")
def mm1_certs():
    v = quadratic([1.0, 1.0])
    K = set(linear_le([5, 3], 11))
    s = LyapunovCertificate(v, lambda x: float(sum(x)), K, 11.0, "r")
    e = LyapunovCertificate(v, lambda x: 1.0, K, 11.0, "e")
    return s, e


@pytest.fixture
def age():
    model = AgeChain(6, 0.3)
    K = {(i,) for i in range(6)}
    r = LyapunovCertificate(model.lyapunov, model.reward, K, minimal_c(model, model.lyapunov, model.reward, K), "r")
    return model, r


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
