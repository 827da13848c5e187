"""Command line: ``detfunc run|validate|plotdata``.

Exit codes: 0 success, 2 invalid configuration or missing artifacts,
3 numerical blow-up (partial artifacts are written and flagged).
"""
from __future__ import annotations

import argparse
import json
import logging
import sys

from .config import ConfigError, load_config
from .scenarios import EXIT_INVALID, EXIT_OK, emit_plot_data, run_scenario, validate
from .spectral import ModelError

log = logging.getLogger("detfunc")


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="detfunc", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run a scenario config")
    r.add_argument("config")
    r.add_argument("--output", help="output directory (overrides config and environment)")
    v = sub.add_parser("validate", help="check a scenario config without running it")
    v.add_argument("config")
    d = sub.add_parser("plotdata", help="long-format CSV from a run manifest")
    d.add_argument("manifest")
    d.add_argument("-o", "--output", help="destination CSV (default: next to the manifest)")
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        if args.command == "validate":
            info = validate(load_config(args.config))
            print(json.dumps(info, sort_keys=True, default=str))
            return EXIT_OK
        if args.command == "run":
            out = run_scenario(load_config(args.config), args.output)
            print(f"{out.summary['scenario']}: {out.summary.get('verdict')} "
                  f"[{out.summary['status']}] -> {out.root}")
            return out.exit_code
        path = emit_plot_data(args.manifest, args.output)
        print(path)
        return EXIT_OK
    except (ConfigError, ModelError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":  # pragma: no cover
    raise SystemExit(main())
