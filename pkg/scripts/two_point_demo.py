"""Two symmetric atoms against a uniform target: iteration vs Newton vs the
closed form ``y = +-Phi^{-1}(1/2 + b/a) / sqrt(2)``."""
from __future__ import annotations

import argparse
import math
import sys

from basscalib.fixedpoint import FixedPointProblem, contraction_bound, derivative_density, iterate
from basscalib.gauss_kernel import norm_ppf
from basscalib.measures import DiscreteMeasure, Uniform
from basscalib.semidiscrete import SemidiscreteSystem


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--a", type=float, default=1.0)
    ap.add_argument("--b", type=float, nargs="+", default=[0.05, 0.1, 0.25, 0.4, 0.45, 0.49])
    args = ap.parse_args(argv)

    print("b,closed_form,iterate,newton,iterations,observed_rate,rate_bound")
    for b in args.b:
        mu, nu = DiscreteMeasure([-b, b]), Uniform(-args.a, args.a)
        p = FixedPointProblem(mu, nu)
        Q, tr = iterate(p, [0.0, 0.1], atol=1e-13)
        y, _ = SemidiscreteSystem(mu, nu).solve_newton()
        exact = float(norm_ppf(0.5 + b / args.a)) / math.sqrt(2)
        q = contraction_bound(derivative_density(p, Q))
        print(f"{b},{exact:.12f},{Q.values[1]:.12f},{y[1]:.12f},{tr.iterations},"
              f"{tr.fitted_rate():.4f},{q:.4f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
