"""Brute-force references on fully enumerated finite chains.

Nothing here shares code with the truncation engine: chains are built as one
sparse matrix and solved directly.  Infinite models are boxed, with any
transition that leaves the box redirected to the nearest state inside it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import breadth_first_order, connected_components
from scipy.sparse.linalg import splu

from .errors import InvalidParam, Reducible
from .markov_model import DtmcModel, EmbeddedChain, State, StateCoder


@dataclass
class FiniteChain:
    P: sp.csr_matrix
    states: list
    reward: np.ndarray
    z: int
    weight: np.ndarray  # per-step time weight: 1 for a DTMC, 1/lambda for an embedded chain

    def __post_init__(self):
        n = self.P.shape[0]
        sums = np.asarray(self.P.sum(axis=1)).ravel()
        if np.abs(sums - 1.0).max(initial=0.0) > 1e-10:
            raise InvalidParam("oracle chain rows must be stochastic")
        ncomp, _ = connected_components(self.P, directed=True, connection="strong")
        if ncomp != 1:
            raise Reducible(f"oracle chain has {ncomp} communicating classes")
        if not 0 <= self.z < n:
            raise InvalidParam("z out of range")

    @property
    def n(self) -> int:
        return self.P.shape[0]

    def index(self, x: State) -> int:
        return self.states.index(x)

    def vector(self, fn: Callable[[State], float]) -> np.ndarray:
        return np.array([fn(x) for x in self.states], dtype=float)


def from_matrix(P, reward: Sequence[float] | None = None, z: int = 0) -> FiniteChain:
    P = sp.csr_matrix(P, dtype=float)
    n = P.shape[0]
    reward = np.zeros(n) if reward is None else np.asarray(reward, dtype=float)
    return FiniteChain(P, [(i,) for i in range(n)], reward, z, np.ones(n))


def from_model(model: DtmcModel, shape: Sequence[int], z: State) -> FiniteChain:
    """Enumerate ``model`` on the box ``{0..shape_i - 1}`` with clipped exits."""
    coder = StateCoder(shape)
    top = np.array(coder.shape) - 1
    strides = np.array(coder._strides)
    rows, cols, vals = [], [], []
    states = list(coder.states())
    for i, x in enumerate(states):
        targets, probs = model.row_arrays(x)
        clipped = np.clip(targets, 0, top)
        rows.append(np.full(probs.size, i))
        cols.append(clipped @ strides)
        vals.append(probs)
    n = coder.size
    P = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n))
    P.sum_duplicates()
    reward = np.array([model.reward(x) for x in states])
    if isinstance(model, EmbeddedChain):
        weight = np.array([model.unit_reward(x) for x in states])
    else:
        weight = np.ones(n)
    return FiniteChain(P, states, reward, coder.encode(z), weight)


def _taboo_lu(chain: FiniteChain):
    keep = np.arange(chain.n) != chain.z
    sub = chain.P[keep][:, keep]
    A = (sp.identity(chain.n - 1, format="csc") - sub.tocsc()).tocsc()
    return keep, A, splu(A)


def _check_reaches_z(chain: FiniteChain):
    order = breadth_first_order(chain.P.T.tocsr(), chain.z, directed=True, return_predecessors=False)
    if order.size != chain.n:
        raise Reducible("z is not reachable from every state")


def exact_hitting_reward(chain: FiniteChain, q: np.ndarray | None = None) -> np.ndarray:
    """``E_x sum_{j < psi(z)} q(X_j)`` for every state, zero at ``z``."""
    _check_reaches_z(chain)
    q = chain.reward if q is None else np.asarray(q, dtype=float)
    keep, A, lu = _taboo_lu(chain)
    f = np.zeros(chain.n)
    if chain.n > 1:
        f[keep] = lu.solve(q[keep])
    return f


def stationary(chain: FiniteChain) -> np.ndarray:
    """Stationary distribution from the cycle formula ``nu(y) = E_z (visits to y before return)``."""
    _check_reaches_z(chain)
    keep, A, lu = _taboo_lu(chain)
    nu = np.zeros(chain.n)
    nu[chain.z] = 1.0
    if chain.n > 1:
        from_z = chain.P[chain.z].toarray().ravel()[keep]
        nu[keep] = lu.solve(from_z, trans="T")
    return nu / math.fsum(nu)


def exact_poisson(chain: FiniteChain, r: np.ndarray | None = None,
                  weight: np.ndarray | None = None) -> tuple[np.ndarray, float]:
    """Solve ``(P - I) g = -(r - alpha w)`` with ``g(z) = 0``.

    ``alpha = pi r / pi w``; with the default unit weight this is the
    long-run average reward, with ``w = 1/lambda`` it is the time average of
    the underlying jump process.
    """
    r = chain.reward if r is None else np.asarray(r, dtype=float)
    w = chain.weight if weight is None else np.asarray(weight, dtype=float)
    pi = stationary(chain)
    alpha = float(pi @ r / (pi @ w))
    g = exact_hitting_reward(chain, r - alpha * w)
    return g, alpha


def poisson_residual(chain: FiniteChain, g: np.ndarray, alpha: float, r=None, weight=None) -> float:
    r = chain.reward if r is None else r
    w = chain.weight if weight is None else weight
    return float(np.abs(chain.P @ g - g + r - alpha * w).max())


def hitting_residual(chain: FiniteChain, f: np.ndarray, q: np.ndarray) -> float:
    keep = np.arange(chain.n) != chain.z
    Pf = chain.P @ np.where(keep, f, 0.0)
    return float(np.abs((f - q - Pf)[keep]).max(initial=0.0))


def mc_hitting_estimate(chain: FiniteChain, q: np.ndarray | None, x: int, n_paths: int,
                        seed: int, max_steps: int = 10**7) -> tuple[float, float]:
    """Monte Carlo mean of ``sum_{j < psi(z)} q(X_j)`` from state index ``x``.

    Returns ``(mean, half_width)`` with a 95% normal half-width.  All paths
    advance together; the generator is numpy's PCG64 seeded with ``seed``.
    """
    q = chain.reward if q is None else np.asarray(q, dtype=float)
    if x == chain.z:
        return 0.0, 0.0
    rng = np.random.Generator(np.random.PCG64(seed))
    P = chain.P
    row_of = np.repeat(np.arange(chain.n), np.diff(P.indptr))
    cum = np.cumsum(P.data)
    starts = np.repeat(np.concatenate([[0.0], cum])[P.indptr[:-1]], np.diff(P.indptr))
    within = cum - starts
    last = P.indptr[1:] - 1
    within[last[np.diff(P.indptr) > 0]] = 1.0
    keys = row_of + within

    state = np.full(n_paths, x, dtype=np.intp)
    total = np.zeros(n_paths)
    active = np.arange(n_paths)
    for _ in range(max_steps):
        if active.size == 0:
            break
        s = state[active]
        total[active] += q[s]
        u = rng.random(active.size)
        pos = np.searchsorted(keys, s + u, side="right")
        nxt = P.indices[np.minimum(pos, P.indices.size - 1)]
        state[active] = nxt
        active = active[nxt != chain.z]
    else:
        raise RuntimeError("paths did not all reach z within max_steps")
    mean = float(total.mean())
    half = 1.959963984540054 * float(total.std(ddof=1)) / math.sqrt(n_paths) if n_paths > 1 else math.inf
    return mean, half
