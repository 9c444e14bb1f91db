"""Two-sided bounds on ``f(x) = E_x sum_{j < tau(z)} q(X_j)`` from a truncated solve.

Notation follows the block partition: ``K~ = K - {z}``, ``A' = A - K``,
``T`` the exit time from ``A`` and ``T_K`` the return time to ``K``.

* ``G(x, y) = P_x(X_{T_K} = y, T_K < T)`` on ``K~ x K~``;
* ``xi(x) = P_x(T < T_K)``, the escape probability;
* ``k(x, q)``: reward collected before ``T_K ^ T``;
* ``k'(x, q)``: Lyapunov bound on the reward collected after escaping.

The upper bound is returned as ``lower + width`` where ``width`` is assembled
from nonnegative terms only, so small gaps are not lost to cancellation.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.linalg as sla

from .errors import TruncationTooSmall
from .certificate import LyapunovCertificate
from .markov_model import CtmcModel, DtmcModel, State, embed_ctmc
from .truncation import BlockSystem, Partition, assemble, monotone_fixed_point, solve_inner

# A computed gate this close to 1 cannot be told apart from 1 in floating point.
GATE_MARGIN = 1e-10


@dataclass
class Taboo:
    W: np.ndarray  # (I - P22)^{-1} [P21 | P(., z)] on A' x (K~ + z)
    G: np.ndarray
    to_z: np.ndarray  # P_x(X_{T_K} = z, T_K < T) on K~
    xi: np.ndarray  # escape probability on K~ then A'
    lu: tuple | None  # LU factors of I - G
    partition_error: float
    gate: float
    gate_vector: np.ndarray


def _solve_G(taboo: Taboo, rhs: np.ndarray) -> np.ndarray:
    if taboo.lu is None:
        return np.zeros_like(rhs)
    return sla.lu_solve(taboo.lu, rhs)


def taboo(sys: BlockSystem) -> Taboo:
    """Taboo probabilities and escape vector, computed once per system."""
    if "taboo" in sys._cache:
        return sys._cache["taboo"]
    nK, nA = sys.nK, sys.nA
    p1z, p2z = sys.split(sys.p_to_z)
    m1, m2 = sys.split(sys.escape)

    if nA:
        rhs = np.hstack([sys.P21.toarray(), p2z[:, None]])
        W = solve_inner(sys, rhs)
        xi2 = solve_inner(sys, m2)
    else:
        W = np.zeros((0, nK + 1))
        xi2 = np.zeros(0)
    P12 = sys.P12
    G = sys.P11.toarray() + P12 @ W[:, :nK]
    to_z = p1z + P12 @ W[:, nK]
    xi1 = m1 + P12 @ xi2
    xi = np.concatenate([xi1, xi2])

    err_K = np.abs(to_z + G.sum(axis=1) + xi1 - 1.0).max(initial=0.0)
    err_A = np.abs(W.sum(axis=1) + xi2 - 1.0).max(initial=0.0)

    if nK:
        lu = sla.lu_factor(np.eye(nK) - G)
        gate_vector = sla.lu_solve(lu, xi1)
        gate = float(gate_vector.max())
    else:
        lu, gate_vector, gate = None, np.zeros(0), 0.0
    out = Taboo(W, G, to_z, xi, lu, float(max(err_K, err_A)), gate, gate_vector)
    sys._cache["taboo"] = out
    return out


def compute_G(sys: BlockSystem) -> tuple[np.ndarray, np.ndarray]:
    """``G`` on ``K~ x K~`` and the companion column of probabilities of entering ``K`` at ``z``."""
    t = taboo(sys)
    return t.G, t.to_z


def compute_xi(sys: BlockSystem) -> np.ndarray:
    return taboo(sys).xi


def compute_k(sys: BlockSystem, q: np.ndarray, rigorous: bool = False) -> np.ndarray:
    """Reward collected before returning to ``K`` or leaving ``A``; ``q`` is given on the solve states."""
    q1, q2 = sys.split(np.asarray(q, dtype=float))
    u2 = solve_inner(sys, q2, rigorous=rigorous)
    return np.concatenate([q1 + sys.P12 @ u2, u2])


def compute_kprime_upper(sys: BlockSystem, tail: np.ndarray) -> np.ndarray:
    """Upper bound on the reward collected between leaving ``A`` and reaching ``K``.

    ``tail`` holds ``sum_{y in A^c} P(x,y) v(y)`` on the solve states.
    """
    t1, t2 = sys.split(np.asarray(tail, dtype=float))
    w2 = solve_inner(sys, t2)
    return np.concatenate([t1 + sys.P12 @ w2, w2])


def lower_kappa(sys: BlockSystem, q: np.ndarray, rigorous: bool = False) -> np.ndarray:
    """``(I - G)^{-1} k`` on ``K~``, extended to ``A'`` through ``W``.

    Both pieces together are the expected reward collected before hitting
    ``z`` or leaving ``A``.  Rigorous mode computes exactly that quantity by
    monotone iteration on ``P`` restricted to ``A - {z}``, which keeps the
    result below the true value under rounding.
    """
    q = np.asarray(q, dtype=float)
    if rigorous:
        f, it = monotone_fixed_point(sys.M, q)
        sys.diagnostics["monotone_iterations"] += it
        return f
    t = taboo(sys)
    k1, k2 = sys.split(compute_k(sys, q))
    low1 = _solve_G(t, k1)
    low2 = k2 + t.W[:, : sys.nK] @ low1
    low = np.concatenate([low1, low2])
    neg = low < 0
    if neg.any():
        sys.diagnostics["clamped"] += int(neg.sum())
        low[neg] = 0.0
    return low


@dataclass
class HittingBoundResult:
    states: tuple
    lower: np.ndarray
    width: np.ndarray | None
    gate: float
    upper_norm: float | None = None  # max of the upper bound over K~
    diagnostics: dict = field(default_factory=dict)

    @property
    def upper(self) -> np.ndarray | None:
        if self.width is None:
            return None
        return self.lower + self.width

    def at(self, x: State) -> tuple[float, float | None]:
        i = self.states.index(x)
        up = None if self.width is None else float(self.lower[i] + self.width[i])
        return float(self.lower[i]), up


def upper_width(sys: BlockSystem, lower: np.ndarray, tail: np.ndarray) -> tuple[np.ndarray, float]:
    """``upper - lower`` over the solve states, and the max-norm of ``upper`` on ``K~``.

    Raises TruncationTooSmall when the gate ``max (I - G)^{-1} xi`` is not below one.
    """
    t = taboo(sys)
    nK = sys.nK
    if t.gate >= 1.0 - GATE_MARGIN:
        raise TruncationTooSmall(t.gate)
    kp1, kp2 = sys.split(compute_kprime_upper(sys, tail))
    low1 = lower[:nK]
    d1 = _solve_G(t, kp1)
    a_norm = float((low1 + d1).max(initial=0.0))
    width1 = d1 + t.gate_vector * (a_norm / (1.0 - t.gate))
    upper_norm = float((low1 + width1).max(initial=0.0))
    width2 = kp2 + t.W[:, :nK] @ width1 + t.xi[nK:] * upper_norm
    return np.concatenate([width1, width2]), upper_norm


def upper_kappa(sys: BlockSystem, q: np.ndarray, tail: np.ndarray) -> np.ndarray:
    low = lower_kappa(sys, q)
    width, _ = upper_width(sys, low, tail)
    return low + width


def bounds_on_system(sys: BlockSystem, q: Callable[[State], float], v: Callable[[State], float],
                     rigorous: bool = False, tail_hook: Callable[[State], float] | None = None,
                     allow_lower_only: bool = False) -> HittingBoundResult:
    """Bounds on ``E_x sum_{j < tau(z)} q(X_j)`` for ``x`` in ``A - {z}``.

    ``tail_hook(x)`` may replace the exact tail sums with user upper bounds;
    it only ever feeds the upper bound.  When the gate fails, the lower bound
    is attached to the raised TruncationTooSmall (or returned with
    ``width=None`` if ``allow_lower_only``).
    """
    qv, _ = sys.evaluate(q)
    if (qv < 0).any():
        raise ValueError("q must be nonnegative")
    t = taboo(sys)
    low = lower_kappa(sys, qv, rigorous=rigorous)
    if tail_hook is None:
        tail, _ = sys.tails(v)
    else:
        tail, _ = sys.evaluate(tail_hook)
    diag = {"gate": t.gate, "partition_error": t.partition_error,
            "row_sum_error": sys.row_sum_error, **sys.diagnostics}
    states = sys.partition.solve_states
    try:
        width, norm = upper_width(sys, low, tail)
    except TruncationTooSmall as exc:
        result = HittingBoundResult(states, low, None, t.gate, None, diag)
        if allow_lower_only:
            return result
        exc.lower = result
        raise
    return HittingBoundResult(states, low, width, t.gate, norm, diag)


def hitting_bounds(model: DtmcModel | CtmcModel, cert: LyapunovCertificate, part: Partition,
                   q: Callable[[State], float] | None = None, *, system: BlockSystem | None = None,
                   rigorous: bool = False, tail_hook=None, allow_lower_only: bool = False) -> HittingBoundResult:
    """Assemble (unless ``system`` is given) and bound the hitting reward for ``q``.

    ``q`` defaults to the certificate's.  A jump process is handled on its
    embedded chain, with ``q`` divided by the exit rate.
    """
    if not cert.K <= set(part.K):
        raise ValueError("partition K must contain the certificate's K")
    q = cert.q if q is None else q
    if isinstance(model, CtmcModel):
        model = embed_ctmc(model)
        q_ct = q
        q = lambda x: q_ct(x) / model.holding(x)  # noqa: E731
    sys = assemble(model, part) if system is None else system
    return bounds_on_system(sys, q, cert.v, rigorous=rigorous, tail_hook=tail_hook,
                            allow_lower_only=allow_lower_only)
