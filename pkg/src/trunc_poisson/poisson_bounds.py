"""Bounds on the solution of Poisson's equation, normalised to vanish at ``z``.

For a chain with nonnegative reward ``r`` the solution is

    g*(x) = E_x sum_{j < tau(z)} r(X_j) - alpha * E_x tau(z),    alpha = pi r,

so two hitting-reward bounds (for ``r`` and for the unit reward ``e``) plus
bounds on ``alpha`` give an interval for ``g*``.  Jump processes run the same
path on the embedded chain with ``s' = s / lambda`` and ``e' = 1 / lambda``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .certificate import LyapunovCertificate
from .errors import DegenerateDenominator
from .hitting_bounds import HittingBoundResult, bounds_on_system
from .markov_model import CtmcModel, DtmcModel, RewardOverride, State, embed_ctmc
from .truncation import BlockSystem, Partition, assemble


@dataclass(frozen=True)
class ZStateBounds:
    lower: float
    width: float

    @property
    def upper(self) -> float:
        return self.lower + self.width


@dataclass(frozen=True)
class AverageRewardBounds:
    lower: float
    upper: float
    width: float | None = None

    def __post_init__(self):
        if self.width is None:
            object.__setattr__(self, "width", self.upper - self.lower)
        if not 0.0 <= self.lower <= self.upper:
            raise ValueError(f"bad average-reward interval [{self.lower}, {self.upper}]")

    def contains(self, value: float, slack: float = 0.0) -> bool:
        return self.lower - slack <= value <= self.upper + slack


@dataclass
class BoundTable:
    """Per-state bounds over ``A`` in lexicographic state order."""

    states: list
    lower: np.ndarray
    upper: np.ndarray
    approx: np.ndarray
    width: np.ndarray
    exact: np.ndarray | None = None
    alpha: AverageRewardBounds | None = None
    meta: dict = field(default_factory=dict)
    parts: dict = field(default_factory=dict)

    def row(self, x: State) -> dict:
        i = self.states.index(x)
        out = {"lower": self.lower[i], "upper": self.upper[i], "approx": self.approx[i]}
        if self.exact is not None:
            out["exact"] = self.exact[i]
        return out


def z_state_bounds(sys: BlockSystem, res: HittingBoundResult, q_z: float, tail_z: float) -> ZStateBounds:
    """Bounds on ``E_z sum_{j < tau(z)} q(X_j)`` by one step from ``z``.

    The upper side charges every transition from ``z`` into ``A^c`` with
    ``v(y) + max_{K~} upper``.
    """
    lower = q_z + float(sys.z_row @ res.lower)
    if res.width is None:
        return ZStateBounds(lower, np.inf)
    width = float(sys.z_row @ res.width) + tail_z + sys.escape_z * res.upper_norm
    return ZStateBounds(lower, width)


def alpha_bounds(z_r: ZStateBounds, z_e: ZStateBounds) -> AverageRewardBounds:
    """Ratio bounds on the long-run average reward from the two cycle means."""
    if not z_e.lower > 0.0:
        raise DegenerateDenominator(f"lower bound on the mean cycle length is {z_e.lower}")
    lo = z_r.lower / z_e.upper
    hi = z_r.upper / z_e.lower
    width = (z_r.width * z_e.upper + z_r.lower * z_e.width) / (z_e.lower * z_e.upper)
    return AverageRewardBounds(lo, hi, width)


def split_signed_reward(r: Callable[[State], float]):
    """Positive and negative parts, ``r = r_plus - r_minus``."""
    return (lambda x: max(r(x), 0.0)), (lambda x: max(-r(x), 0.0))


def _combine(sys, res_r, res_e, zr, ze, alpha, part, exact_fn, meta) -> BoundTable:
    n = len(part.solve_states)
    order = sorted(range(n + 1), key=lambda i: part.z if i == n else part.solve_states[i])
    states = [part.z if i == n else part.solve_states[i] for i in order]

    lo_r, lo_e = res_r.lower, res_e.lower
    wr, we = res_r.width, res_e.width
    a_lo, a_hi, a_w = alpha.lower, alpha.upper, alpha.width
    lower = lo_r - a_hi * (lo_e + we)
    width = wr + a_hi * we + a_w * lo_e
    approx = lo_r - (zr.lower / ze.lower) * lo_e

    def place(vec):
        full = np.append(vec, 0.0)  # z is pinned to 0
        return full[order]

    lower, width, approx = place(lower), place(width), place(approx)
    exact = None if exact_fn is None else np.array([exact_fn(x) for x in states], dtype=float)
    return BoundTable(states, lower, lower + width, approx, width, exact, alpha, meta,
                      {"r": res_r, "e": res_e, "z_r": zr, "z_e": ze, "system": sys})


def _table(chain: DtmcModel, q_r, q_e, v_r, v_e, part, alpha, rigorous, system, tail_hooks, exact_fn, meta):
    sys = assemble(chain, part) if system is None else system
    hooks = tail_hooks or {}
    res_r = bounds_on_system(sys, q_r, v_r, rigorous=rigorous, tail_hook=hooks.get("r"))
    res_e = bounds_on_system(sys, q_e, v_e, rigorous=rigorous, tail_hook=hooks.get("e"))

    def z_bounds(res, q, v, hook):
        tail_z = hook(part.z) if hook is not None else sys.tails(v)[1]
        return z_state_bounds(sys, res, float(q(part.z)), tail_z)

    zr = z_bounds(res_r, q_r, v_r, hooks.get("r"))
    ze = z_bounds(res_e, q_e, v_e, hooks.get("e"))
    if alpha is None:
        alpha = alpha_bounds(zr, ze)
    meta = {**meta, "gate_r": res_r.gate, "gate_e": res_e.gate,
            "partition_error": res_r.diagnostics["partition_error"],
            "row_sum_error": sys.row_sum_error, "diagnostics": dict(sys.diagnostics),
            "alpha_lower": alpha.lower, "alpha_upper": alpha.upper, "rigorous": rigorous}
    return _combine(sys, res_r, res_e, zr, ze, alpha, part, exact_fn, meta)


def _check_K(part: Partition, *certs: LyapunovCertificate):
    for c in certs:
        if not c.K <= set(part.K):
            raise ValueError(f"partition K must contain the K of certificate {c.label!r}")


def g_bounds(model: DtmcModel, cert_r: LyapunovCertificate, cert_e: LyapunovCertificate,
             part: Partition, alpha: AverageRewardBounds | None = None, *,
             reward: Callable[[State], float] | None = None, rigorous: bool = False,
             system: BlockSystem | None = None, tail_hooks: dict | None = None) -> BoundTable:
    """Interval for ``g*`` on ``A`` for a discrete-time chain with nonnegative reward.

    ``alpha`` may be supplied from any other source; by default the ratio
    bounds from the two cycle means are used.  ``approx`` is the estimate
    built only from lower bounds, which converges as ``A`` grows.
    """
    _check_K(part, cert_r, cert_e)
    r = model.reward if reward is None else reward
    exact_fn = model.closed_form() if reward is None else None
    meta = {"model": model.name, "params": model.params, "kind": "dtmc",
            "z": part.z, "K_size": len(part.K), "A_size": len(part.A)}
    return _table(model, r, lambda x: 1.0, cert_r.v, cert_e.v, part, alpha, rigorous,
                  system, tail_hooks, exact_fn, meta)


def h_bounds(ctmc: CtmcModel, cert_s: LyapunovCertificate, cert_e: LyapunovCertificate,
             part: Partition, alpha: AverageRewardBounds | None = None, *, rigorous: bool = False,
             system: BlockSystem | None = None, tail_hooks: dict | None = None) -> BoundTable:
    """Interval for ``h*`` solving ``Q h = -(s - delta)``, via the embedded chain.

    ``alpha`` here bounds ``delta``, the time-average reward.
    """
    _check_K(part, cert_s, cert_e)
    chain = embed_ctmc(ctmc)
    meta = {"model": ctmc.name, "params": ctmc.params, "kind": "ctmc",
            "z": part.z, "K_size": len(part.K), "A_size": len(part.A)}
    return _table(chain, chain.reward, chain.unit_reward, cert_s.v, cert_e.v, part, alpha,
                  rigorous, system, tail_hooks, ctmc.closed_form(), meta)


def poisson_bounds(model, cert_r, cert_e, part, **kw) -> BoundTable:
    if isinstance(model, CtmcModel):
        return h_bounds(model, cert_r, cert_e, part, **kw)
    return g_bounds(model, cert_r, cert_e, part, **kw)


def signed_g_bounds(model: DtmcModel, reward: Callable[[State], float],
                    cert_plus: LyapunovCertificate, cert_minus: LyapunovCertificate,
                    cert_e: LyapunovCertificate, part: Partition, **kw) -> BoundTable:
    """Bounds for a reward of either sign, from its positive and negative parts."""
    r_plus, r_minus = split_signed_reward(reward)
    sys = kw.pop("system", None) or assemble(model, part)
    plus = g_bounds(RewardOverride(model, r_plus), cert_plus, cert_e, part, reward=r_plus, system=sys, **kw)
    minus = g_bounds(RewardOverride(model, r_minus), cert_minus, cert_e, part, reward=r_minus, system=sys, **kw)
    lower = plus.lower - minus.upper
    width = plus.width + minus.width
    meta = {**plus.meta, "signed": True}
    return BoundTable(plus.states, lower, lower + width, plus.approx - minus.approx, width,
                      None, None, meta, {"plus": plus, "minus": minus})
