"""Iteration count and fixed-point hull width as the pair nears reducibility.

Source: truncated normal N(0, 1) on [-4, 4] quantized to 10 atoms; target:
truncated normal with stdev ``s`` on [-4, 4], ``s`` decreasing to 1.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

from basscalib.cli import read_config, run_sweep, set_path, RunConfig, sweep_csv


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="out/ramp.csv")
    ap.add_argument("--values", type=float, nargs="+",
                    default=[1.6, 1.5, 1.4, 1.3, 1.2, 1.15, 1.1, 1.075, 1.05, 1.03, 1.0])
    ap.add_argument("--threads", type=int, default=4)
    args = ap.parse_args(argv)

    cfg, base = read_config("tn_ramp")
    d = set_path(cfg.to_dict(), "sweep.values", args.values)
    d["threads"] = args.threads
    rows = run_sweep(RunConfig.from_dict(d), base)
    text = sweep_csv(rows)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    Path(args.out).write_text(text)
    print(text, end="")
    return 0


if __name__ == "__main__":
    sys.exit(main())
