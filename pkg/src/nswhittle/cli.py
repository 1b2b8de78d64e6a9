"""Command line entry point: ``nswhittle run|tune|audit``.

Exit codes: 0 success, 1 config error, 2 runtime error, 3 audit failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from .core import RmabError
from .harness import (
    POLICIES,
    ConfigError,
    ExperimentConfig,
    audit_run,
    emit_results,
    make_environment,
    resolve_windows,
    run_experiment,
)

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_AUDIT = 0, 1, 2, 3

log = logging.getLogger("nswhittle")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nswhittle",
                                     description="Index policies for non-stationary restless bandits.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="simulate replications and write regret.csv")
    run.add_argument("--config", required=True, help="JSON file with ExperimentConfig fields")
    run.add_argument("--policy", choices=POLICIES)
    run.add_argument("--replications", type=int)
    run.add_argument("--seed", type=int)
    run.add_argument("--out", help="output directory (default: config 'output' or ./run)")
    run.add_argument("--audit", action="store_true", help="instrument confidence-set audits")
    run.add_argument("--solve-every", type=int, metavar="K",
                     help="re-solve the multiplier every K steps")

    tune = sub.add_parser("tune", help="print the tuned window and bonus per arm")
    tune.add_argument("--config", required=True)

    audit = sub.add_parser("audit", help="re-verify invariants of an emitted run")
    audit.add_argument("--run", required=True, dest="run_dir")
    return parser


def _overrides(args) -> dict:
    changes = {}
    for name in ("policy", "replications", "seed", "solve_every"):
        value = getattr(args, name)
        if value is not None:
            changes[name] = value
    if args.audit:
        changes["audit"] = True
    if args.out:
        changes["output"] = args.out
    return changes


def cmd_run(args) -> int:
    cfg = ExperimentConfig.load(args.config)
    cfg = cfg.replace(**_overrides(args))
    out = cfg.output or "run"
    log.info("running %d replication(s) of %s, T=%d", cfg.replications, cfg.policy, cfg.horizon)
    artifacts = run_experiment(cfg)
    emit_results(artifacts, cfg, out)
    final = [a.final_regret for a in artifacts]
    print(f"wrote {out}/regret.csv; mean final regret {sum(final) / len(final):.6g}")
    return EXIT_OK


def cmd_tune(args) -> int:
    cfg = ExperimentConfig.load(args.config)
    windows, etas = resolve_windows(cfg.replace(window="auto", eta="auto"),
                                    make_environment(cfg, 0))
    print(json.dumps({"windows": windows, "etas": etas}))
    return EXIT_OK


def cmd_audit(args) -> int:
    failures = audit_run(args.run_dir)
    for msg in failures:
        print(f"FAIL {msg}")
    if failures:
        return EXIT_AUDIT
    print("audit ok")
    return EXIT_OK


COMMANDS = {"run": cmd_run, "tune": cmd_tune, "audit": cmd_audit}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (RmabError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
