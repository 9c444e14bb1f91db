"""Lyapunov drift certificates ``(P v)(x) <= v(x) - q(x) + c 1{x in K}``.

Certificates for jump processes are stated in continuous time,
``(Q v)(x) <= -q(x) + c 1{x in K}``, and checked on the embedded chain after
dividing through by the exit rate.  Only finitely many states can be checked;
the complement of the check set is reported as attested, never as verified.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable

from .markov_model import CtmcModel, DtmcModel, State


@dataclass(frozen=True)
class LyapunovCertificate:
    v: Callable[[State], float]
    q: Callable[[State], float]
    K: frozenset
    c: float
    label: str = ""

    def __post_init__(self):
        if self.c < 0:
            raise ValueError("drift constant c must be nonnegative")
        object.__setattr__(self, "K", frozenset(self.K))


@dataclass
class DriftReport:
    label: str
    c: float
    checked: int
    max_violation: float
    worst_state: State | None
    violations: list = field(default_factory=list)
    unverified_region: str = "complement of the check set (attested by user)"

    @property
    def passed(self) -> bool:
        return not self.violations

    def summary(self) -> str:
        status = "PASS" if self.passed else f"FAIL ({len(self.violations)} states)"
        return (f"A1({self.label}) c={self.c:g}: {status}; checked {self.checked} states, "
                f"max drift excess {self.max_violation:.6g} at {self.worst_state}; "
                f"unverified: {self.unverified_region}")


def drift_excess(model, v, q, x: State) -> float:
    """``(Pv)(x) - v(x) + q(x)``; for a CTMC ``((Qv)(x) + q(x)) / lambda(x)``."""
    if isinstance(model, CtmcModel):
        lam = model.exit_rate(x)
        return (model.generator_apply(x, v) + q(x)) / lam
    return model.expect(x, v) - v(x) + q(x)


def _scale(model, x: State) -> float:
    return model.exit_rate(x) if isinstance(model, CtmcModel) else 1.0


def verify_drift(model: DtmcModel | CtmcModel, cert: LyapunovCertificate,
                 check_set: Iterable[State], tol: float = 1e-9) -> DriftReport:
    """Evaluate the drift inequality on ``check_set``.

    A state fails when its excess exceeds ``tol * (1 + v(x))``.  For a CTMC the
    constant ``c`` is divided by the exit rate along with everything else.
    """
    worst, worst_x, bad, n = -math.inf, None, [], 0
    for x in check_set:
        n += 1
        slack = drift_excess(model, cert.v, cert.q, x)
        if x in cert.K:
            slack -= cert.c / _scale(model, x)
        if slack > worst:
            worst, worst_x = slack, x
        if slack > tol * (1.0 + abs(cert.v(x))):
            bad.append(x)
    return DriftReport(cert.label, cert.c, n, worst, worst_x, bad)


def suggest_K(model, v, q, envelope: Iterable[State], z: State | None = None) -> set:
    """States of ``envelope`` where the drift excess is positive, plus ``z``."""
    K = {x for x in envelope if drift_excess(model, v, q, x) > 0}
    if z is not None:
        K.add(z)
    return K


def minimal_c(model, v, q, K: Iterable[State]) -> float:
    """Smallest ``c`` making the inequality hold on ``K`` (continuous-time units for a CTMC)."""
    best = 0.0
    for x in K:
        best = max(best, drift_excess(model, v, q, x) * _scale(model, x))
    return best
