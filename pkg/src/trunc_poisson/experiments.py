"""Config-driven runs: bound tables, gap metrics and truncation sweeps.

A config is a JSON object with sections ``model``, ``certificates``,
``partition`` and optionally ``sweep``, ``metrics`` and ``oracle``.  See the
bundled files under ``trunc_poisson/configs`` for complete examples.
"""

from __future__ import annotations

import csv
import datetime as _dt
import io
import json
import logging
import math
import os
import tempfile
import time
from dataclasses import dataclass, field
from fractions import Fraction
from importlib import resources
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import __version__
from .certificate import LyapunovCertificate, minimal_c, verify_drift
from .errors import BoundError, CertificateFailure, ConfigError, MissingExact
from .markov_model import CtmcModel, build_model
from .oracle import exact_poisson, from_model, poisson_residual
from .poisson_bounds import BoundTable, poisson_bounds
from .markov_model import embed_ctmc
from .sets import as_state, box, function, state_set
from .truncation import Partition

log = logging.getLogger(__name__)

_TOP_KEYS = {"model", "certificates", "partition", "sweep", "metrics", "oracle"}
_CERT_KEYS = {"v", "K", "c", "check"}
DEFAULT_SCHEDULE = (1.0, 1.5, 2.0, 2.5, 3.0, 3.5, 4.0)


# ---------------------------------------------------------------------------
# config


@dataclass
class RunConfig:
    model: object
    cert_r: LyapunovCertificate
    cert_e: LyapunovCertificate
    check_r: list
    check_e: list
    z: tuple
    A: list
    K_extra: list
    sweep: dict | None
    metrics: dict
    oracle: dict | None
    raw: dict

    @property
    def dimension(self) -> int:
        return len(self.z)

    def partition(self, A: Sequence | None = None) -> Partition:
        K = set(self.cert_r.K) | set(self.cert_e.K) | set(self.K_extra) | {self.z}
        return Partition(self.z, tuple(K), tuple(self.A if A is None else A))


def load_config(path_or_name: str | os.PathLike) -> dict:
    """Read a JSON config file, or a bundled one by bare name (e.g. ``slotted_queue``)."""
    p = Path(path_or_name)
    if p.exists():
        text = p.read_text()
    else:
        bundled = resources.files("trunc_poisson") / "configs" / f"{path_or_name}.json"
        if not bundled.is_file():
            raise ConfigError(f"no config file {path_or_name!r}")
        text = bundled.read_text()
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc


def _reject_extra(section: str, given: Mapping, allowed: set):
    extra = set(given) - allowed
    if extra:
        raise ConfigError(f"unknown fields in {section}: {sorted(extra)}")


def parse_config(raw: Mapping) -> RunConfig:
    if not isinstance(raw, Mapping):
        raise ConfigError("config must be a JSON object")
    _reject_extra("config", raw, _TOP_KEYS)
    for key in ("model", "certificates", "partition"):
        if key not in raw:
            raise ConfigError(f"config is missing the {key!r} section")
    model = build_model(raw["model"])
    dim = model.dimension

    part = raw["partition"]
    _reject_extra("partition", part, {"z", "A", "K"})
    if "z" not in part or "A" not in part:
        raise ConfigError("partition needs 'z' and 'A'")
    z = as_state(part["z"])
    if len(z) != dim:
        raise ConfigError(f"z has dimension {len(z)}, model has {dim}")
    A = state_set(part["A"], dim)
    K_extra = state_set(part["K"], dim) if "K" in part else []

    certs = raw["certificates"]
    if set(certs) <= {"r", "e"} and certs:
        specs = {"r": certs.get("r"), "e": certs.get("e")}
        if specs["r"] is None or specs["e"] is None:
            raise ConfigError("certificates needs both 'r' and 'e' when given separately")
    else:
        specs = {"r": certs, "e": certs}
    unit = lambda x: 1.0  # noqa: E731
    built = {}
    for label, spec in specs.items():
        _reject_extra(f"certificates.{label}", spec, _CERT_KEYS)
        if "v" not in spec or "K" not in spec:
            raise ConfigError(f"certificate {label!r} needs 'v' and 'K'")
        v = function(spec["v"])
        K = state_set(spec["K"], dim)
        if z not in K:
            K = K + [z]
        q = model.reward if label == "r" else unit
        c = spec.get("c", "auto")
        if c == "auto":
            c = minimal_c(model, v, q, K)
        elif not isinstance(c, (int, float)) or c < 0:
            raise ConfigError(f"certificate {label!r}: c must be a nonnegative number or 'auto'")
        check = state_set(spec["check"], dim) if "check" in spec else list(A)
        built[label] = (LyapunovCertificate(v, q, frozenset(K), float(c), label), check)

    sweep = raw.get("sweep")
    if sweep is not None:
        _reject_extra("sweep", sweep, {"t", "scale", "D"})
        if "scale" not in sweep:
            raise ConfigError("sweep needs 'scale'")
        ts = [float(t) for t in sweep.get("t", DEFAULT_SCHEDULE)]
        if any(b <= a for a, b in zip(ts, ts[1:])) or not ts:
            raise ConfigError("sweep schedule must be nonempty and strictly increasing")
    metrics = dict(raw.get("metrics", {}))
    _reject_extra("metrics", metrics, {"D", "exact", "gap", "shell"})
    if metrics.get("gap", "rel") not in ("rel", "appr_rel", "abs"):
        raise ConfigError("metrics.gap must be 'rel', 'appr_rel' or 'abs'")
    oracle = raw.get("oracle")
    if oracle is not None:
        _reject_extra("oracle", oracle, {"box"})
    return RunConfig(model, built["r"][0], built["e"][0], built["r"][1], built["e"][1],
                     z, A, K_extra, sweep, metrics, oracle, dict(raw))


def sweep_set(scale: float, t: float, dim: int) -> list:
    """``{x : x_i <= ceil(scale * t)}`` with the product taken in exact decimal arithmetic."""
    side = math.ceil(Fraction(str(scale)) * Fraction(str(t)))
    return box([side] * dim)


# ---------------------------------------------------------------------------
# metrics


@dataclass
class GapReport:
    states: list
    rel: np.ndarray | None
    appr_rel: np.ndarray
    abs: np.ndarray
    sup: dict = field(default_factory=dict)


def _safe_ratio(num: np.ndarray, den: np.ndarray) -> np.ndarray:
    out = np.full(num.shape, np.nan)
    ok = den != 0
    out[ok] = np.abs(num[ok]) / np.abs(den[ok])
    return out


def gap_metrics(table: BoundTable, D: Sequence | None = None, need_rel: bool = False) -> GapReport:
    """Relative, approximate-relative and absolute gaps on ``D`` (default ``A - {z}``)."""
    z = tuple(table.meta.get("z", table.states[0]))
    if D is None:
        D = [x for x in table.states if x != z]
    if z in set(D):
        raise ValueError("D must exclude z, where the exact solution is 0")
    pos = {x: i for i, x in enumerate(table.states)}
    try:
        idx = np.array([pos[x] for x in D], dtype=np.intp)
    except KeyError as exc:
        raise ValueError(f"D state {exc.args[0]} is not in A") from None
    width = table.width[idx]
    if table.exact is None:
        if need_rel:
            raise MissingExact("relative error gap needs an exact solution")
        rel = None
    else:
        rel = _safe_ratio(width, table.exact[idx])
    appr = _safe_ratio(width, table.upper[idx])
    gaps = np.abs(width)

    def sup(a):
        return None if a is None or not np.isfinite(a).any() else float(np.nanmax(a))

    return GapReport(list(D), rel, appr, gaps, {"rel": sup(rel), "appr_rel": sup(appr), "abs": sup(gaps)})


def shell_core_ratio(table: BoundTable, kind: str = "rel", frac: float = 0.1) -> tuple[float, float, float]:
    """Max gap over the outer ``frac`` shell of ``A`` against the inner ``frac`` core.

    Position is ``max_i x_i / max_i n_i`` where ``n_i`` is the extent of ``A``
    along coordinate ``i``.  Returns ``(shell_max, core_max, ratio)``.
    """
    rep = gap_metrics(table)
    gap = {"rel": rep.rel, "appr_rel": rep.appr_rel, "abs": rep.abs}[kind]
    if gap is None:
        raise MissingExact("relative error gap needs an exact solution")
    pts = np.array(rep.states, dtype=float)
    extent = pts.max(axis=0)
    radius = (pts / np.where(extent > 0, extent, 1)).max(axis=1)
    shell = np.nanmax(gap[radius >= 1 - frac])
    core = np.nanmax(gap[radius <= frac])
    return float(shell), float(core), float(shell / core) if core > 0 else math.inf


# ---------------------------------------------------------------------------
# CSV


def _fmt(x) -> str:
    if x is None:
        return ""
    x = float(x)
    return "" if math.isnan(x) else repr(x)


def _state_cols(dim: int) -> list[str]:
    return [f"x{i + 1}" for i in range(dim)]


def write_table_csv(path, table: BoundTable, gaps: GapReport | None = None, timestamp: bool = True):
    """Per-state CSV over all of ``A``; undefined gap values are left empty."""
    dim = len(table.states[0])
    full = gap_metrics(table) if gaps is None else gaps
    by_state = {x: i for i, x in enumerate(full.states)}
    cols = _state_cols(dim) + ["lower", "upper", "approx"]
    if table.exact is not None:
        cols += ["exact", "rel_gap"]
    cols += ["appr_rel_gap", "abs_gap"]
    buf = io.StringIO()
    if timestamp:
        buf.write(f"# generated {_dt.datetime.now(_dt.timezone.utc).isoformat()}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for i, x in enumerate(table.states):
        j = by_state.get(x)
        row = [str(c) for c in x] + [_fmt(table.lower[i]), _fmt(table.upper[i]), _fmt(table.approx[i])]
        if table.exact is not None:
            row += [_fmt(table.exact[i]), _fmt(None if j is None else full.rel[j])]
        row += [_fmt(None if j is None else full.appr_rel[j]), _fmt(table.width[i])]
        w.writerow(row)
    _atomic_write(path, buf.getvalue())


def read_table_csv(path) -> BoundTable:
    with open(path, newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    reader = csv.DictReader(lines)
    cols = reader.fieldnames or []
    dim = sum(1 for c in cols if c.startswith("x") and c[1:].isdigit())
    rows = list(reader)

    def col(name):
        return np.array([float(r[name]) if r[name] != "" else np.nan for r in rows])

    states = [tuple(int(r[f"x{i + 1}"]) for i in range(dim)) for r in rows]
    exact = col("exact") if "exact" in cols else None
    return BoundTable(states, col("lower"), col("upper"), col("approx"), col("abs_gap"), exact)


def _atomic_write(path, text: str):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    with os.fdopen(fd, "w", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (set, frozenset)):
        return sorted(o)
    raise TypeError(f"cannot serialise {type(o).__name__}")


def write_manifest(path, manifest: dict, timestamp: bool = True):
    import scipy

    body = dict(manifest)
    body["versions"] = {"trunc_poisson": __version__, "numpy": np.__version__, "scipy": scipy.__version__}
    if timestamp:
        body["generated"] = _dt.datetime.now(_dt.timezone.utc).isoformat()
    _atomic_write(path, json.dumps(body, indent=2, sort_keys=True, default=_json_default) + "\n")


def gnuplot_script(csv_name: str, dim: int, has_exact: bool) -> str:
    gap_col = "rel_gap" if has_exact else "appr_rel_gap"
    head = ["set datafile separator ','", "set key autotitle columnhead", "set terminal pngcairo size 1000,700"]
    if dim == 1:
        bounds = [f"plot '{csv_name}' using 'x1':'lower' with lines title 'lower', \\",
                  f"     '' using 'x1':'upper' with lines title 'upper'"
                  + (", \\\n     '' using 'x1':'exact' with lines title 'exact'" if has_exact else "")]
        gaps = [f"plot '{csv_name}' using 'x1':(log10(column('{gap_col}'))) with linespoints title 'log10 {gap_col}'"]
    else:
        bounds = [f"splot '{csv_name}' using 'x1':'x2':'upper' title 'upper', '' using 'x1':'x2':'lower' title 'lower'"]
        gaps = ["set view map", "set dgrid3d",
                f"splot '{csv_name}' using 'x1':'x2':(log10(column('{gap_col}'))) with pm3d title 'log10 {gap_col}'"]
    return "\n".join(head + ["set output 'bounds.png'"] + bounds + ["set output 'gaps.png'"] + gaps) + "\n"


# ---------------------------------------------------------------------------
# runs


@dataclass
class RunResult:
    table: BoundTable
    gaps: GapReport
    manifest: dict


def check_certificates(cfg: RunConfig) -> list:
    reports = [verify_drift(cfg.model, cfg.cert_r, cfg.check_r),
               verify_drift(cfg.model, cfg.cert_e, cfg.check_e)]
    for rep in reports:
        log.info(rep.summary())
    return reports


def _bounds(cfg: RunConfig, A, rigorous: bool) -> BoundTable:
    table = poisson_bounds(cfg.model, cfg.cert_r, cfg.cert_e, cfg.partition(A), rigorous=rigorous)
    if cfg.metrics.get("exact") is False:
        table.exact = None
    return table


def run_single(cfg: RunConfig, out_dir=None, rigorous: bool = False, timestamp: bool = True) -> RunResult:
    """Verify certificates, bound ``g*``/``h*`` on ``A`` and write ``bounds.csv``."""
    reports = check_certificates(cfg)
    failed = [r for r in reports if not r.passed]
    if failed:
        raise CertificateFailure("; ".join(r.summary() for r in failed))
    table = _bounds(cfg, cfg.A, rigorous)
    D = state_set(cfg.metrics["D"], cfg.dimension) if "D" in cfg.metrics else None
    need_rel = cfg.metrics.get("gap", "rel") == "rel" and table.exact is not None
    gaps = gap_metrics(table, D, need_rel=need_rel)
    manifest = {
        "command": "run",
        "config": cfg.raw,
        "certificates": [{"label": r.label, "c": r.c, "passed": r.passed, "checked": r.checked,
                          "max_excess": r.max_violation, "unverified": r.unverified_region}
                         for r in reports],
        "bounds": {k: v for k, v in table.meta.items() if k not in ("params",)},
        "gaps_sup_over_D": gaps.sup,
        "rows": len(table.states),
    }
    if out_dir is not None:
        out = Path(out_dir)
        write_table_csv(out / "bounds.csv", table, timestamp=timestamp)
        write_manifest(out / "manifest.json", manifest, timestamp)
        _atomic_write(out / "plot.gp", gnuplot_script("bounds.csv", cfg.dimension, table.exact is not None))
    return RunResult(table, gaps, manifest)


@dataclass
class SweepStep:
    t: float
    size: int
    status: str
    gate_r: float | None = None
    gate_e: float | None = None
    sup: dict = field(default_factory=dict)
    approx_err: float | None = None
    lower_monotone: bool | None = None
    seconds: float = 0.0
    table: BoundTable | None = None


def _kappa_lower_on(table: BoundTable, D) -> np.ndarray:
    out = []
    for key in ("r", "e"):
        res = table.parts[key]
        pos = {x: i for i, x in enumerate(res.states)}
        out.append(res.lower[[pos[x] for x in D]])
    return np.concatenate(out)


def run_sweep(cfg: RunConfig, out_dir=None, rigorous: bool = False, timestamp: bool = True,
              check_monotone: bool = True) -> list[SweepStep]:
    """Bounds over growing boxes ``A_t``; gaps are measured on a fixed ``D``.

    Lower bounds on ``D`` must not decrease from one successful step to the
    next (exactly in rigorous mode, up to ``1e-12`` relative otherwise).
    """
    if cfg.sweep is None:
        raise ConfigError("config has no 'sweep' section")
    reports = check_certificates(cfg)
    if not all(r.passed for r in reports):
        raise CertificateFailure("; ".join(r.summary() for r in reports if not r.passed))
    ts = [float(t) for t in cfg.sweep.get("t", DEFAULT_SCHEDULE)]
    scale = cfg.sweep["scale"]
    dim = cfg.dimension
    if "D" in cfg.sweep:
        D = state_set(cfg.sweep["D"], dim)
    else:
        D = [x for x in sweep_set(scale, ts[0], dim) if x != cfg.z]
    slack = 0.0 if rigorous else 1e-12
    steps: list[SweepStep] = []
    prev = None
    for t in ts:
        A = sweep_set(scale, t, dim)
        start = time.perf_counter()
        try:
            table = _bounds(cfg, A, rigorous)
        except BoundError as exc:
            steps.append(SweepStep(t, len(A), type(exc).__name__, gate_r=getattr(exc, "gate", None),
                                   seconds=time.perf_counter() - start))
            log.warning("sweep step t=%s failed: %s", t, exc)
            continue
        gaps = gap_metrics(table, D)
        step = SweepStep(t, len(A), "ok", table.meta["gate_r"], table.meta["gate_e"], gaps.sup,
                         seconds=time.perf_counter() - start, table=table)
        if table.exact is not None:
            pos = {x: i for i, x in enumerate(table.states)}
            idx = [pos[x] for x in D]
            step.approx_err = float(np.max(np.abs(table.approx[idx] - table.exact[idx])))
        low = _kappa_lower_on(table, D)
        if prev is not None:
            step.lower_monotone = bool(np.all(low >= prev - slack * (1.0 + np.abs(prev))))
        prev = low
        steps.append(step)
    if out_dir is not None:
        _write_sweep(Path(out_dir), cfg, steps, D, timestamp)
    if check_monotone and any(s.lower_monotone is False for s in steps):
        bad = [s.t for s in steps if s.lower_monotone is False]
        raise NonMonotoneSweep(f"lower bounds decreased at t in {bad}", steps)
    return steps


class NonMonotoneSweep(BoundError):
    exit_code = 5

    def __init__(self, message, steps):
        super().__init__(message)
        self.steps = steps


def _write_sweep(out: Path, cfg: RunConfig, steps, D, timestamp: bool):
    cols = ["t", "size", "status", "gate_r", "gate_e", "sup_rel_gap", "sup_appr_rel_gap",
            "sup_abs_gap", "sup_approx_error", "lower_monotone"]
    if timestamp:
        cols.append("seconds")
    buf = io.StringIO()
    if timestamp:
        buf.write(f"# generated {_dt.datetime.now(_dt.timezone.utc).isoformat()}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for s in steps:
        row = [repr(s.t), s.size, s.status, _fmt(s.gate_r), _fmt(s.gate_e), _fmt(s.sup.get("rel")),
               _fmt(s.sup.get("appr_rel")), _fmt(s.sup.get("abs")), _fmt(s.approx_err),
               "" if s.lower_monotone is None else str(s.lower_monotone).lower()]
        if timestamp:
            row.append(f"{s.seconds:.3f}")
        w.writerow(row)
    _atomic_write(out / "sweep.csv", buf.getvalue())
    manifest = {"command": "sweep", "config": cfg.raw, "D_size": len(D),
                "steps": [{"t": s.t, "size": s.size, "status": s.status, "gate_r": s.gate_r,
                           "gate_e": s.gate_e, "sup": s.sup} for s in steps]}
    write_manifest(out / "manifest.json", manifest, timestamp)
    gp = ("set datafile separator ','\nset key autotitle columnhead\nset logscale y\n"
          "set terminal pngcairo size 1000,700\nset output 'sweep.png'\n"
          "plot 'sweep.csv' using 't':'sup_rel_gap' with linespoints, "
          "'' using 't':'sup_appr_rel_gap' with linespoints\n")
    _atomic_write(out / "sweep.gp", gp)


def run_oracle(cfg: RunConfig, out_dir=None, timestamp: bool = True) -> dict:
    """Exact solve on the configured oracle box, written as ``oracle.csv``."""
    if cfg.oracle is None:
        raise ConfigError("config has no 'oracle' section")
    upper = cfg.oracle["box"]
    chain_model = embed_ctmc(cfg.model) if isinstance(cfg.model, CtmcModel) else cfg.model
    chain = from_model(chain_model, [u + 1 for u in upper], cfg.z)
    g, alpha = exact_poisson(chain)
    resid = poisson_residual(chain, g, alpha)
    if out_dir is not None:
        out = Path(out_dir)
        buf = io.StringIO()
        if timestamp:
            buf.write(f"# generated {_dt.datetime.now(_dt.timezone.utc).isoformat()}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(_state_cols(cfg.dimension) + ["exact"])
        for x, gx in zip(chain.states, g):
            w.writerow([str(c) for c in x] + [repr(float(gx))])
        _atomic_write(out / "oracle.csv", buf.getvalue())
        write_manifest(out / "manifest.json", {"command": "oracle", "config": cfg.raw, "alpha": alpha,
                                               "states": chain.n, "residual": resid}, timestamp)
    return {"g": g, "alpha": alpha, "residual": resid, "chain": chain}
