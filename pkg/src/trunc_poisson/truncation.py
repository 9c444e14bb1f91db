"""Block partition of a chain over ``K~ = K - {z}``, ``A' = A - K`` and ``A^c``.

Rows of every state in ``A`` are enumerated once.  Transitions that land in
``A^c`` are kept as explicit exit lists, so tail sums ``sum_{y in A^c} P(x,y) v(y)``
are exact for any ``v``.  Solve-block indices put ``K~`` first and ``A'``
second, each in lexicographic state order; ``z`` is held separately.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Iterable

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .errors import InvalidParam, NoConvergence, SingularInner
from .markov_model import DtmcModel, State

log = logging.getLogger(__name__)

ROW_SUM_TOL = 1e-12
RESIDUAL_TOL = 1e-10
MAX_MONOTONE_ITER = 500_000


@dataclass(frozen=True)
class Partition:
    z: State
    K: tuple
    A: tuple

    def __post_init__(self):
        K = tuple(sorted(set(self.K)))
        A = tuple(sorted(set(self.A)))
        object.__setattr__(self, "K", K)
        object.__setattr__(self, "A", A)
        if self.z not in K:
            raise InvalidParam(f"z={self.z} must belong to K")
        if not set(K) <= set(A):
            raise InvalidParam("K must be a subset of A")

    @property
    def K_tilde(self) -> tuple:
        return tuple(x for x in self.K if x != self.z)

    @property
    def A_prime(self) -> tuple:
        Kset = set(self.K)
        return tuple(x for x in self.A if x not in Kset)

    @property
    def solve_states(self) -> tuple:
        """``K~`` followed by ``A'``: the index order of every solve block."""
        return self.K_tilde + self.A_prime

    @property
    def index(self) -> dict:
        return {x: i for i, x in enumerate(self.solve_states)}


def make_partition(z, K: Iterable, A: Iterable) -> Partition:
    return Partition(tuple(z), tuple(K), tuple(A))


@dataclass
class BlockSystem:
    """Assembled blocks of ``P`` over a partition.

    ``M`` is ``P`` restricted to ``(K~ u A') x (K~ u A')``; the named blocks
    ``P11 P12 P21 P22`` are slices of it.  ``p_to_z`` is the column ``P(., z)``
    and ``z_row`` the row ``P(z, .)`` over the same index set.
    """

    partition: Partition
    M: sp.csr_matrix
    p_to_z: np.ndarray
    z_row: np.ndarray
    p_zz: float
    escape: np.ndarray  # over solve states
    escape_z: float
    exit_rows: np.ndarray  # row index (n_solve means z) of each exit transition
    exit_states: list
    exit_probs: np.ndarray
    row_sum_error: float
    diagnostics: dict = field(default_factory=lambda: {"clamped": 0, "monotone_iterations": 0})
    _lu: object = None
    _cache: dict = field(default_factory=dict)

    @property
    def nK(self) -> int:
        return len(self.partition.K_tilde)

    @property
    def nA(self) -> int:
        return len(self.partition.A_prime)

    @cached_property
    def P11(self):
        return self.M[: self.nK, : self.nK]

    @cached_property
    def P12(self):
        return self.M[: self.nK, self.nK:]

    @cached_property
    def P21(self):
        return self.M[self.nK:, : self.nK]

    @cached_property
    def P22(self):
        return self.M[self.nK:, self.nK:]

    def evaluate(self, fn: Callable[[State], float]) -> tuple[np.ndarray, float]:
        """``fn`` on the solve states, and at ``z``."""
        vals = np.array([fn(x) for x in self.partition.solve_states], dtype=float)
        return vals, float(fn(self.partition.z))

    def tails(self, v: Callable[[State], float]) -> tuple[np.ndarray, float]:
        """Exact ``sum_{y in A^c} P(x,y) v(y)`` for each solve state, and for ``z``."""
        n = self.nK + self.nA
        if not self.exit_states:
            return np.zeros(n), 0.0
        vy = np.array([v(y) for y in self.exit_states], dtype=float)
        t = np.bincount(self.exit_rows, weights=self.exit_probs * vy, minlength=n + 1)
        return t[:n], float(t[n])

    def split(self, vec: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return vec[: self.nK], vec[self.nK:]


def assemble(model: DtmcModel, part: Partition) -> BlockSystem:
    """Enumerate the rows of ``A`` and factor ``I - P22``.

    Raises SingularInner when the inner system cannot be factored or its
    expected exit time is not finite and nonnegative.
    """
    index = part.index
    n = len(index)
    rows, cols, vals = [], [], []
    p_to_z = np.zeros(n)
    z_row = np.zeros(n)
    escape = np.zeros(n)
    p_zz = 0.0
    escape_z = 0.0
    exit_rows, exit_states, exit_probs = [], [], []
    worst = 0.0

    for i, x in enumerate(part.solve_states + (part.z,)):
        total = 0.0
        for y, p in model.row(x):
            total += p
            j = index.get(y)
            if i < n:
                if j is not None:
                    rows.append(i)
                    cols.append(j)
                    vals.append(p)
                elif y == part.z:
                    p_to_z[i] += p
                else:
                    escape[i] += p
                    exit_rows.append(i)
                    exit_states.append(y)
                    exit_probs.append(p)
            else:
                if j is not None:
                    z_row[j] += p
                elif y == part.z:
                    p_zz += p
                else:
                    escape_z += p
                    exit_rows.append(n)
                    exit_states.append(y)
                    exit_probs.append(p)
        worst = max(worst, abs(total - 1.0))
    if worst > ROW_SUM_TOL:
        log.warning("transition rows deviate from 1 by up to %.3g", worst)

    M = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    M.sum_duplicates()
    M.sort_indices()
    sys = BlockSystem(part, M, p_to_z, z_row, p_zz, escape, escape_z,
                      np.asarray(exit_rows, dtype=np.intp), exit_states,
                      np.asarray(exit_probs, dtype=float), worst)
    _factor_inner(sys)
    return sys


def _factor_inner(sys: BlockSystem) -> None:
    if sys.nA == 0:
        return
    I_minus = (sp.identity(sys.nA, format="csc") - sys.P22.tocsc()).tocsc()
    try:
        sys._lu = splu(I_minus)
    except RuntimeError as exc:
        raise SingularInner(f"I - P22 is singular: {exc}") from exc
    steps = sys._lu.solve(np.ones(sys.nA))
    if not np.all(np.isfinite(steps)) or steps.min() < -1e-8 * (1 + np.abs(steps).max()):
        raise SingularInner("I - P22 has no finite nonnegative inverse on A'; A may be ill-chosen")
    sys._cache["exit_steps"] = np.maximum(steps, 0.0)


def monotone_fixed_point(M: sp.csr_matrix, rhs: np.ndarray, max_iter: int = MAX_MONOTONE_ITER,
                         x0: np.ndarray | None = None) -> tuple[np.ndarray, int]:
    """Iterate ``u <- M u + rhs`` from ``u = 0`` until it stops changing.

    With ``M`` and ``rhs`` nonnegative the iterates are nondecreasing and stay
    below the true solution; every floating-point operation involved is
    monotone, so the same ordering holds for the computed iterates.
    """
    u = np.zeros_like(rhs, dtype=float) if x0 is None else x0.copy()
    for it in range(1, max_iter + 1):
        nxt = M @ u + rhs
        if np.array_equal(nxt, u):
            return nxt, it
        u = nxt
    raise NoConvergence(f"monotone iteration did not settle in {max_iter} steps")


def solve_inner(sys: BlockSystem, rhs: np.ndarray, rigorous: bool = False) -> np.ndarray:
    """Solve ``(I - P22) u = rhs`` for one or several right-hand sides.

    The direct path reuses the factorization from :func:`assemble`.  In
    rigorous mode (and as fallback when the direct residual is too large)
    the monotone iteration is used instead.
    """
    rhs = np.asarray(rhs, dtype=float)
    if sys.nA == 0:
        return np.zeros_like(rhs)
    if rhs.shape[0] != sys.nA:
        raise InvalidParam(f"rhs has {rhs.shape[0]} rows, A' has {sys.nA}")
    if not rhs.any():
        return np.zeros_like(rhs)
    nonneg = bool((rhs >= 0).all())
    P22 = sys.P22
    if rigorous:
        u, it = monotone_fixed_point(P22, rhs)
        sys.diagnostics["monotone_iterations"] += it
        return u

    u = sys._lu.solve(rhs)
    if not np.all(np.isfinite(u)):
        raise SingularInner("inner solve produced non-finite values")
    scale = 1.0 + np.abs(rhs).max()
    resid = np.abs(u - P22 @ u - rhs).max()
    if resid > RESIDUAL_TOL * scale:
        u = u + sys._lu.solve(rhs - (u - P22 @ u))
        resid = np.abs(u - P22 @ u - rhs).max()
    if resid > RESIDUAL_TOL * scale:
        if not nonneg:
            raise NoConvergence(f"inner residual {resid:.3g} after refinement")
        log.warning("direct inner solve residual %.3g; falling back to monotone iteration", resid)
        u, it = monotone_fixed_point(P22, rhs)
        sys.diagnostics["monotone_iterations"] += it
    sys.diagnostics["max_inner_residual"] = max(sys.diagnostics.get("max_inner_residual", 0.0), float(resid))
    if nonneg:
        neg = u < 0
        if neg.any():
            sys.diagnostics["clamped"] += int(neg.sum())
            u = np.where(neg, 0.0, u)
    return u
