#!/usr/bin/env python
"""Plot every time series listed in a run manifest (log scale for gaps).

Usage: python scripts/plot_run.py runs/nudge/manifest.json [-o figure.png]
"""
import argparse
import csv
from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from detfunc.scenarios import emit_plot_data  # noqa: E402


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("manifest", type=Path)
    ap.add_argument("-o", "--output", type=Path)
    args = ap.parse_args(argv)
    data = emit_plot_data(args.manifest)
    series = defaultdict(lambda: ([], []))
    with open(data, newline="") as fh:
        for row in csv.DictReader(fh):
            t, v = series[row["series"]]
            t.append(float(row["t"]))
            v.append(float(row["value"]))
    fig, ax = plt.subplots(figsize=(7, 4))
    for name, (t, v) in sorted(series.items()):
        if "gap" in name or "norm" in name:
            v = [max(abs(x), 1e-16) for x in v]
        ax.plot(t, v, lw=0.8, label=name if len(series) <= 8 else None)
    if any("gap" in n or "norm" in n for n in series):
        ax.set_yscale("log")
    ax.set_xlabel("t")
    if len(series) <= 8:
        ax.legend(fontsize=7)
    out = args.output or args.manifest.with_name("plot.png")
    fig.tight_layout()
    fig.savefig(out, dpi=120)
    print(out)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
