"""Finite state-set and Lyapunov-function descriptors used by config files.

State sets::

    {"interval": [lo, hi]}                     1-D, inclusive
    {"box": [n1, n2]}  or  {"rect": [n1, n2]}  {x : 0 <= x_i <= n_i}
    {"linear_le": {"coef": [a1, a2], "rhs": b}}  {x >= 0 : a . x <= b}, a_i > 0
    {"list": [[0, 1], [2, 0], ...]}

Functions (for ``v``)::

    {"quadratic": [a1, a2], "linear": [b1, b2], "const": c}
"""

from __future__ import annotations

import itertools
import math
from typing import Callable, Iterable, Mapping, Sequence

from .errors import ConfigError

State = tuple[int, ...]


def box(upper: Sequence[int]) -> list[State]:
    """All nonnegative integer states with ``x_i <= upper_i``, lexicographically ordered."""
    return [tuple(s) for s in itertools.product(*(range(int(u) + 1) for u in upper))]


def linear_le(coef: Sequence[float], rhs: float) -> list[State]:
    if any(a <= 0 for a in coef):
        raise ConfigError("linear_le coefficients must be positive to describe a finite set")
    upper = [math.floor(rhs / a + 1e-12) for a in coef]
    if any(u < 0 for u in upper):
        return []
    return [x for x in box(upper) if math.fsum(a * xi for a, xi in zip(coef, x)) <= rhs + 1e-12]


def state_set(desc: Mapping, dimension: int | None = None) -> list[State]:
    if not isinstance(desc, Mapping) or len(desc) != 1:
        raise ConfigError(f"state set must be a single-key mapping, got {desc!r}")
    (kind, arg), = desc.items()
    if kind == "interval":
        lo, hi = (int(a) for a in arg)
        states = [(i,) for i in range(lo, hi + 1)]
    elif kind in ("box", "rect"):
        states = box(arg)
    elif kind == "linear_le":
        if set(arg) != {"coef", "rhs"}:
            raise ConfigError("linear_le needs exactly 'coef' and 'rhs'")
        states = linear_le(arg["coef"], float(arg["rhs"]))
    elif kind == "list":
        states = sorted({tuple(int(c) for c in s) for s in arg})
    else:
        raise ConfigError(f"unknown state-set kind {kind!r}")
    if dimension is not None and any(len(s) != dimension for s in states):
        raise ConfigError(f"state set {desc!r} does not have dimension {dimension}")
    return states


def as_state(value: int | Iterable[int]) -> State:
    if isinstance(value, int):
        return (value,)
    return tuple(int(v) for v in value)


def quadratic(coef: Sequence[float], linear: Sequence[float] | None = None,
              const: float = 0.0) -> Callable[[State], float]:
    a = tuple(float(c) for c in coef)
    b = tuple(float(c) for c in linear) if linear is not None else (0.0,) * len(a)

    def v(x: State) -> float:
        return const + sum(ai * xi * xi + bi * xi for ai, bi, xi in zip(a, b, x))

    v.coef = a  # type: ignore[attr-defined]
    return v


def function(desc: Mapping) -> Callable[[State], float]:
    extra = set(desc) - {"quadratic", "linear", "const"}
    if extra or "quadratic" not in desc:
        raise ConfigError(f"unsupported function descriptor {desc!r}")
    return quadratic(desc["quadratic"], desc.get("linear"), float(desc.get("const", 0.0)))
