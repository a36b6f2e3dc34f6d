"""Bass local-volatility models on finer and finer maturity grids.

The marginals are ``Unif[-sqrt(t + eps), sqrt(t + eps)]`` at ``n + 1``
equally spaced times in [0, 1]; for each ``n`` the script calibrates, simulates
and reports the per-maturity KS distance in units of ``1/sqrt(N)``.  This is a
demonstration only: no limit is claimed.
"""
from __future__ import annotations

import argparse
import math
import sys

import numpy as np

from basscalib.bass_model import CalibrationConfig, calibrate_bass_lv, simulate
from basscalib.fixedpoint import SolverConfig
from basscalib.measures import Uniform, ks_distance


def marginals(n: int, eps: float):
    times = np.linspace(0.0, 1.0, n + 1)
    return [(float(t), Uniform(-math.sqrt(t + eps), math.sqrt(t + eps))) for t in times]


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--partitions", type=int, nargs="+", default=[2, 4, 8])
    ap.add_argument("--eps", type=float, default=0.25)
    ap.add_argument("--paths", type=int, default=50_000)
    ap.add_argument("--grid-size", type=int, default=40)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    cfg = CalibrationConfig(solver_config=SolverConfig(grid_size=args.grid_size))
    print("n,maturity,ks_sqrt_n,iterations")
    for n in args.partitions:
        marg = marginals(n, args.eps)
        model = calibrate_bass_lv(marg, cfg)
        batch = simulate(model, args.paths, seed=args.seed)
        scale = math.sqrt(args.paths)
        for i, (t, law) in enumerate(marg):
            ks = ks_distance(batch.column(t), model.maturity_law(i)) * scale
            its = model.traces[i - 1].iterations if i else 0
            print(f"{n},{t:.4f},{ks:.3f},{its}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
