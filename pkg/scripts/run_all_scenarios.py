#!/usr/bin/env python
"""Run every config in ``configs/`` and print one line per scenario.

Usage: python scripts/run_all_scenarios.py [--output-root DIR] [CONFIG ...]
"""
import argparse
import os
import sys
from pathlib import Path

from detfunc.config import OUTPUT_ROOT_ENV, load_config
from detfunc.scenarios import run_scenario

ROOT = Path(__file__).resolve().parents[1]


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("configs", nargs="*", type=Path)
    ap.add_argument("--output-root", type=Path, default=ROOT / "runs")
    args = ap.parse_args(argv)
    paths = args.configs or sorted((ROOT / "configs").glob("*.yaml"))
    os.environ[OUTPUT_ROOT_ENV] = str(args.output_root)
    worst = 0
    for path in paths:
        out = run_scenario(load_config(path))
        s = out.summary
        print(f"{path.stem:<20} {s.get('verdict', '-'):<22} {s['status']:<9} {out.root}")
        worst = max(worst, out.exit_code)
    return worst


if __name__ == "__main__":
    sys.exit(main())
