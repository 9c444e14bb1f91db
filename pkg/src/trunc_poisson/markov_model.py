"""Countable-state Markov chain and jump-process models.

Models never materialise a transition matrix.  They hand out finite sparse
rows on demand, keyed by integer state tuples, and the truncation code
assembles whatever finite block it needs.  A 1-D state is the tuple ``(x,)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Iterator, Mapping, Sequence

import numpy as np

from .errors import ConfigError, InvalidParam, ZeroExitRate

State = tuple[int, ...]
Row = list[tuple[State, float]]


class StateCoder:
    """Lexicographic dense indexing of the box ``{0..shape[0]-1} x ... ``."""

    def __init__(self, shape: Sequence[int]):
        self.shape = tuple(int(s) for s in shape)
        if not self.shape or any(s <= 0 for s in self.shape):
            raise InvalidParam(f"bad envelope shape {shape!r}")
        strides = [1] * len(self.shape)
        for i in range(len(self.shape) - 2, -1, -1):
            strides[i] = strides[i + 1] * self.shape[i + 1]
        self._strides = tuple(strides)

    @property
    def dimension(self) -> int:
        return len(self.shape)

    @property
    def size(self) -> int:
        return math.prod(self.shape)

    def contains(self, x: State) -> bool:
        return len(x) == len(self.shape) and all(0 <= xi < s for xi, s in zip(x, self.shape))

    def encode(self, x: State) -> int:
        if not self.contains(x):
            raise KeyError(f"state {x} outside envelope {self.shape}")
        return sum(xi * st for xi, st in zip(x, self._strides))

    def decode(self, index: int) -> State:
        return tuple(int(i) for i in np.unravel_index(index, self.shape))

    def states(self) -> Iterator[State]:
        for idx in np.ndindex(*self.shape):
            yield tuple(int(i) for i in idx)


class DtmcModel:
    """Discrete-time chain given by finite transition rows.

    Subclasses implement :meth:`row` and :meth:`reward`.  ``max_up`` is the
    largest upward displacement of any coordinate in one step (the successor
    envelope); downward moves are clipped at zero by every built-in model.
    """

    name = "dtmc"
    dimension = 1
    max_up = 1

    def row(self, x: State) -> Row:
        raise NotImplementedError

    def reward(self, x: State) -> float:
        raise NotImplementedError

    @property
    def params(self) -> dict:
        return {}

    def closed_form(self) -> Callable[[State], float] | None:
        """Exact Poisson solution vanishing at the origin, when known."""
        return None

    def average_reward(self) -> float | None:
        return None

    def row_arrays(self, x: State) -> tuple[np.ndarray, np.ndarray]:
        """Row of ``x`` as an ``(m, dimension)`` target array and an ``(m,)`` probability array."""
        row = self.row(x)
        targets = np.array([y for y, _ in row], dtype=np.int64).reshape(len(row), -1)
        return targets, np.array([p for _, p in row], dtype=float)

    def expect(self, x: State, fn: Callable[[State], float]) -> float:
        """One-step conditional expectation ``(P fn)(x)``."""
        return math.fsum(p * fn(y) for y, p in self.row(x))


class CtmcModel:
    """Markov jump process given by finite off-diagonal rate rows."""

    name = "ctmc"
    dimension = 1
    max_up = 1

    def rate_row(self, x: State) -> Row:
        raise NotImplementedError

    def reward(self, x: State) -> float:
        raise NotImplementedError

    @property
    def params(self) -> dict:
        return {}

    def exit_rate(self, x: State) -> float:
        return math.fsum(rate for _, rate in self.rate_row(x))

    def generator_apply(self, x: State, fn: Callable[[State], float]) -> float:
        """``(Q fn)(x)`` for a function evaluable on the successors of ``x``."""
        fx = fn(x)
        return math.fsum(rate * (fn(y) - fx) for y, rate in self.rate_row(x))

    def closed_form(self) -> Callable[[State], float] | None:
        return None

    def average_reward(self) -> float | None:
        return None


# ---------------------------------------------------------------------------
# Slotted-time queue


@lru_cache(maxsize=16)
def _increment_pmf(q: float, depth: int) -> np.ndarray:
    """P(Z = d) for d = 2, 1, 0, -1, ..., 1 - depth where Z = B - D."""
    d = 2 - np.arange(depth + 2)
    probs = np.zeros(d.shape)
    for b in (1, 2, 3):
        k = b - d  # number served
        ok = k >= 1
        probs[ok] += (1.0 / 3.0) * (1.0 - q) * q ** (k[ok] - 1)
    return probs


@dataclass(frozen=True)
class SlottedQueue(DtmcModel):
    """``X' = max(X + B - D, 0)`` with B uniform on {1,2,3}, D ~ Geometric(1-q) on {1,2,...}."""

    q: float
    name = "slotted_queue"
    dimension = 1
    max_up = 2

    def __post_init__(self):
        if not (0.0 < self.q < 1.0):
            raise InvalidParam(f"q must lie in (0, 1), got {self.q}")

    @property
    def params(self) -> dict:
        return {"q": self.q}

    def zero_mass(self, x: int) -> float:
        """P(x, 0) from the geometric tail of the service count."""
        q = self.q
        return (q ** x) * (1.0 + q + q * q) / 3.0

    def row(self, x: State) -> Row:
        (n,) = x
        pmf = _increment_pmf(self.q, 1 << max(n, 1).bit_length())
        # pmf[i] is P(Z = 2 - i); y = n + 2 - i >= 1  <=>  i <= n + 1
        out: Row = []
        for i in range(n + 2):
            p = float(pmf[i])
            if p > 0.0:
                out.append(((n + 2 - i,), p))
        p0 = self.zero_mass(n)
        if p0 > 0.0:
            out.append(((0,), p0))
        return out

    def row_arrays(self, x: State) -> tuple[np.ndarray, np.ndarray]:
        (n,) = x
        pmf = _increment_pmf(self.q, 1 << max(n, 1).bit_length())[: n + 2]
        keep = pmf > 0.0
        targets = (n + 2 - np.arange(n + 2))[keep]
        probs = pmf[keep]
        p0 = self.zero_mass(n)
        if p0 > 0.0:
            targets = np.append(targets, 0)
            probs = np.append(probs, p0)
        return targets[:, None], probs

    def reward(self, x: State) -> float:
        return float(x[0])

    def closed_form(self):
        if self.q == 0.6:
            return lambda x: float(x[0] * x[0] + 4 * x[0])
        return None

    def average_reward(self):
        if self.q == 0.6:
            return 8.0 / 3.0
        return None


def build_slotted_queue(q: float) -> SlottedQueue:
    return SlottedQueue(float(q))


# ---------------------------------------------------------------------------
# Open Jackson networks (two independent M/M/1 queues is the no-routing case)


@dataclass(frozen=True)
class JacksonNetwork(CtmcModel):
    arrival: tuple[float, ...]
    service: tuple[float, ...]
    routing: tuple[tuple[float, ...], ...]
    name: str = "jackson"
    max_up = 1

    def __post_init__(self):
        n = len(self.arrival)
        if len(self.service) != n or len(self.routing) != n or any(len(r) != n for r in self.routing):
            raise InvalidParam("arrival, service and routing dimensions disagree")
        if any(a <= 0 for a in self.arrival) or any(m <= 0 for m in self.service):
            raise InvalidParam("rates must be positive")
        B = np.asarray(self.routing, dtype=float)
        if (B < 0).any() or (B.sum(axis=1) > 1.0 + 1e-12).any():
            raise InvalidParam("routing rows must be nonnegative and sum to at most 1")
        if n and max(abs(np.linalg.eigvals(B))) >= 1.0:
            raise InvalidParam("routing matrix must have spectral radius below 1")

    @property
    def dimension(self) -> int:
        return len(self.arrival)

    @property
    def params(self) -> dict:
        return {"arrival": list(self.arrival), "service": list(self.service),
                "routing": [list(r) for r in self.routing]}

    def traffic(self) -> np.ndarray:
        """Solve ``nu = lambda + B^T nu``."""
        B = np.asarray(self.routing, dtype=float)
        return np.linalg.solve(np.eye(len(self.arrival)) - B.T, np.asarray(self.arrival))

    def rate_row(self, x: State) -> Row:
        d = self.dimension
        rates: dict[State, float] = {}

        def add(y, r):
            if r > 0.0 and y != x:
                rates[y] = rates.get(y, 0.0) + r

        for i in range(d):
            up = list(x)
            up[i] += 1
            add(tuple(up), self.arrival[i])
            if x[i] > 0:
                mu = self.service[i]
                leave = 1.0 - math.fsum(self.routing[i])
                down = list(x)
                down[i] -= 1
                add(tuple(down), mu * leave)
                for j in range(d):
                    if j == i:
                        continue  # feedback to the same queue leaves the state unchanged
                    moved = list(down)
                    moved[j] += 1
                    add(tuple(moved), mu * self.routing[i][j])
        return list(rates.items())

    def reward(self, x: State) -> float:
        return float(sum(x))

    def _independent(self) -> bool:
        return not any(any(r) for r in self.routing)

    def closed_form(self):
        if not self._independent():
            return None
        gaps = [m - a for a, m in zip(self.arrival, self.service)]
        if min(gaps) <= 0:
            return None
        return lambda x: math.fsum((xi * xi + xi) / (2.0 * g) for xi, g in zip(x, gaps))

    def average_reward(self):
        nu = self.traffic()
        rho = nu / np.asarray(self.service)
        if (rho >= 1).any():
            return None
        return float(np.sum(rho / (1 - rho)))


def build_jackson(arrival, service, routing, name: str = "jackson") -> JacksonNetwork:
    return JacksonNetwork(tuple(float(a) for a in arrival), tuple(float(m) for m in service),
                          tuple(tuple(float(b) for b in r) for r in routing), name=name)


def build_two_mm1(lam1: float, mu1: float, lam2: float, mu2: float) -> JacksonNetwork:
    return build_jackson((lam1, lam2), (mu1, mu2), ((0.0, 0.0), (0.0, 0.0)), name="two_mm1")


# ---------------------------------------------------------------------------
# Embedding and generic wrappers


class EmbeddedChain(DtmcModel):
    """Jump chain of a CTMC, with rewards rescaled by the holding rate.

    ``reward`` is ``s'(x) = s(x)/lambda(x)``; ``unit_reward`` is ``e'(x) = 1/lambda(x)``.
    """

    def __init__(self, ctmc: CtmcModel):
        self.ctmc = ctmc
        self.name = f"embedded_{ctmc.name}"
        self.max_up = ctmc.max_up

    @property
    def dimension(self):
        return self.ctmc.dimension

    @property
    def params(self):
        return self.ctmc.params

    def holding(self, x: State) -> float:
        lam = self.ctmc.exit_rate(x)
        if not lam > 0.0:
            raise ZeroExitRate(f"state {x} has exit rate {lam}")
        return lam

    def row(self, x: State) -> Row:
        rates = self.ctmc.rate_row(x)
        lam = math.fsum(r for _, r in rates)
        if not lam > 0.0:
            raise ZeroExitRate(f"state {x} has exit rate {lam}")
        return [(y, r / lam) for y, r in rates]

    def reward(self, x: State) -> float:
        return self.ctmc.reward(x) / self.holding(x)

    def unit_reward(self, x: State) -> float:
        return 1.0 / self.holding(x)

    def closed_form(self):
        return self.ctmc.closed_form()

    def average_reward(self):
        return self.ctmc.average_reward()


def embed_ctmc(ctmc: CtmcModel) -> EmbeddedChain:
    return EmbeddedChain(ctmc)


class RewardOverride(DtmcModel):
    """Same transitions as ``base`` with a different per-step reward."""

    def __init__(self, base: DtmcModel, reward: Callable[[State], float], name: str | None = None):
        self.base = base
        self._reward = reward
        self.name = name or f"{base.name}_reward"
        self.max_up = base.max_up

    @property
    def dimension(self):
        return self.base.dimension

    def row(self, x):
        return self.base.row(x)

    def reward(self, x):
        return float(self._reward(x))


class MatrixChain(DtmcModel):
    """A finite chain on ``{(0,), ..., (n-1,)}`` read off a dense or sparse matrix."""

    name = "matrix"

    def __init__(self, P, reward: Sequence[float] | None = None, name: str = "matrix"):
        import scipy.sparse as sp

        P = sp.csr_matrix(P, dtype=float)
        P.eliminate_zeros()
        n = P.shape[0]
        if P.shape != (n, n):
            raise InvalidParam("transition matrix must be square")
        if P.data.size and P.data.min() < 0:
            raise InvalidParam("negative transition probability")
        if np.abs(np.asarray(P.sum(axis=1)).ravel() - 1.0).max(initial=0.0) > 1e-12:
            raise InvalidParam("rows must sum to one")
        self.P = P
        self.n = n
        self.rewards = np.zeros(n) if reward is None else np.asarray(reward, dtype=float)
        self.name = name
        self.max_up = n

    def row(self, x):
        (i,) = x
        lo, hi = self.P.indptr[i], self.P.indptr[i + 1]
        return [((int(j),), float(p)) for j, p in zip(self.P.indices[lo:hi], self.P.data[lo:hi])]

    def reward(self, x):
        return float(self.rewards[x[0]])


# ---------------------------------------------------------------------------
# Config


_MODEL_PARAMS = {
    "slotted_queue": {"q"},
    "two_mm1": {"lambda1", "mu1", "lambda2", "mu2"},
    "jackson": {"arrival", "service", "routing"},
}


def build_model(cfg: Mapping) -> DtmcModel | CtmcModel:
    """Build a model from ``{"model": name, "params": {...}}``; unknown keys are rejected."""
    extra = set(cfg) - {"model", "params"}
    if extra:
        raise ConfigError(f"unknown model fields: {sorted(extra)}")
    kind = cfg.get("model")
    if kind not in _MODEL_PARAMS:
        raise ConfigError(f"unknown model {kind!r}; expected one of {sorted(_MODEL_PARAMS)}")
    params = dict(cfg.get("params", {}))
    if set(params) != _MODEL_PARAMS[kind]:
        raise ConfigError(f"{kind} needs params {sorted(_MODEL_PARAMS[kind])}, got {sorted(params)}")
    if kind == "slotted_queue":
        return build_slotted_queue(params["q"])
    if kind == "two_mm1":
        return build_two_mm1(params["lambda1"], params["mu1"], params["lambda2"], params["mu2"])
    return build_jackson(params["arrival"], params["service"], params["routing"])
