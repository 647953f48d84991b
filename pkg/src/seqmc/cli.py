"""Command line interface.

    seqmc run       --config cfg.json --out results/   # full bundle + CSVs
    seqmc simulate  --config builtin:moving-gauss      # one trajectory dump
    seqmc variance | bounds | constants | appendix | examples

Each subcommand runs one report layer.  ``--assert`` turns check failures
into exit code 1 (config errors exit 2); ``--figures`` renders PNG figures
next to the delimited output.  SEQMC_LOG controls log verbosity.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from .config import BUILTIN_NAMES, builtin_config, parse_config
from .errors import ConfigError, SeqmcError
from .harness import SECTIONS, run

log = logging.getLogger("seqmc")


def _load_config(spec: str, seed_override: int | None) -> dict:
    if spec.startswith("builtin:"):
        cfg = builtin_config(spec.split(":", 1)[1])
    else:
        path = Path(spec)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        cfg = parse_config(path.read_text())
    if seed_override is not None:
        cfg["seed"] = int(seed_override)
    return cfg


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="seqmc",
        description="Sequential MCMC particle systems with deterministic oracles and bound checks.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("run",) + SECTIONS:
        sp = sub.add_parser(name, help=f"run the {name} layer" if name != "run" else "run every layer")
        sp.add_argument("--config", required=True,
                        help=f"path to a JSON config, or builtin:<name> with name in {BUILTIN_NAMES}")
        sp.add_argument("--seed", type=int, default=None, help="override the config seed")
        sp.add_argument("--workers", type=int, default=1, help="replicate worker processes")
        sp.add_argument("--out", default=None, help="output directory (bundle.json, CSV tables)")
        sp.add_argument("--assert", dest="do_assert", action="store_true",
                        help="exit 1 when any check fails")
        sp.add_argument("--figures", action="store_true",
                        help="render PNG figures alongside the delimited output")
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("SEQMC_LOG", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        cfg = _load_config(args.config, args.seed)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    sections = SECTIONS if args.command == "run" else (args.command,)
    try:
        bundle, runtime = run(cfg, sections=sections, workers=args.workers, out_dir=args.out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except SeqmcError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    if args.figures and args.out:
        from .figures import render_bundle

        written = render_bundle(bundle, args.out)
        log.info("figures: %s", ", ".join(written))
    n_checks = len(bundle.checks)
    n_fail = len(bundle.failing)
    summary = {
        "sections": list(bundle.sections),
        "checks": n_checks,
        "failures": bundle.failing,
        "seconds": round(runtime["total_seconds"], 3),
    }
    print(json.dumps(summary))
    if args.do_assert and n_fail > 0:
        for cid in bundle.failing:
            print(f"FAIL {cid}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
