"""``bound`` command line entry point."""

from __future__ import annotations

import argparse
import json
import logging
import sys

from .errors import BoundError, ConfigError
from .experiments import (check_certificates, load_config, parse_config, run_oracle, run_single,
                          run_sweep)

log = logging.getLogger("trunc_poisson")


def _fail(exc: BaseException, code: int) -> int:
    payload = {"error": type(exc).__name__, "code": code, "message": str(exc)}
    print(json.dumps(payload), file=sys.stderr)
    return code


def _warn_unverified():
    print("warning: drift was only checked on a finite set; the remainder of the state "
          "space is attested by the user, not verified", file=sys.stderr)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bound", description="Truncation bounds for Poisson's equation")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="bound table on a single truncation set")
    run.add_argument("--config", required=True)
    run.add_argument("--out", required=True)
    run.add_argument("--rigorous", action="store_true", help="monotone iteration for lower bounds")
    run.add_argument("--no-timestamp", action="store_true")

    sw = sub.add_parser("sweep", help="gap metrics over a growing truncation schedule")
    sw.add_argument("--config", required=True)
    sw.add_argument("--out", required=True)
    sw.add_argument("--rigorous", action="store_true")
    sw.add_argument("--no-timestamp", action="store_true")
    sw.add_argument("--no-monotone-check", action="store_true")

    vc = sub.add_parser("verify-cert", help="check the drift certificates on their check sets")
    vc.add_argument("--config", required=True)

    orc = sub.add_parser("oracle", help="exact solve on the oracle box")
    orc.add_argument("--config", required=True)
    orc.add_argument("--out", required=True)
    orc.add_argument("--no-timestamp", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = parse_config(load_config(args.config))
        if args.command == "verify-cert":
            reports = check_certificates(cfg)
            for rep in reports:
                print(rep.summary())
            _warn_unverified()
            return 0 if all(r.passed for r in reports) else 3
        if args.command == "run":
            _warn_unverified()
            res = run_single(cfg, args.out, rigorous=args.rigorous, timestamp=not args.no_timestamp)
            m = res.table.meta
            print(f"{len(res.table.states)} states; average in [{m['alpha_lower']!r}, {m['alpha_upper']!r}]; "
                  f"gates r={m['gate_r']:.3g} e={m['gate_e']:.3g}; sup gaps {res.gaps.sup}")
            return 0
        if args.command == "sweep":
            _warn_unverified()
            steps = run_sweep(cfg, args.out, rigorous=args.rigorous, timestamp=not args.no_timestamp,
                              check_monotone=not args.no_monotone_check)
            for s in steps:
                print(f"t={s.t:g} |A|={s.size} {s.status} sup={s.sup}")
            return 0
        if args.command == "oracle":
            res = run_oracle(cfg, args.out, timestamp=not args.no_timestamp)
            print(f"{res['chain'].n} states; average {res['alpha']!r}; residual {res['residual']:.3g}")
            return 0
    except BoundError as exc:
        return _fail(exc, exc.exit_code)
    except (ValueError, KeyError, TypeError) as exc:
        return _fail(ConfigError(str(exc)), 2)
    return 2


if __name__ == "__main__":
    sys.exit(main())
