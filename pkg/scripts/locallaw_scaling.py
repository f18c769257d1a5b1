#!/usr/bin/env python3
"""Scaling study of the resolvent-diagonal error against its predicted rate.

For each matrix size, samples matrices at z in the bulk, measures
||g - iv||_inf at eta = n^{-1/2} and prints the error multiplied by
(n eta)^{1/2}; the product should stay O(1) as n grows.

Usage: python scripts/locallaw_scaling.py [--sizes 100 200 400] [--trials 10]
"""

import argparse
import math

import numpy as np

from circlaw import dyson, ensemble


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--sizes", type=int, nargs="+", default=[100, 200, 400])
    ap.add_argument("--trials", type=int, default=10)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--z", type=float, default=0.3)
    args = ap.parse_args()

    print(f"{'n':>6} {'eta':>10} {'max scaled inf':>15} {'max scaled avg':>15}")
    for n in args.sizes:
        profile = dyson.constant_profile(n)
        eta = n ** -0.5
        cfg = ensemble.EnsembleConfig(n=n, profile=profile, base_seed=args.seed,
                                      trials=args.trials)
        sol = dyson.solve(profile, eta, args.z ** 2)
        worst_inf = worst_avg = 0.0
        for t in range(args.trials):
            rep = ensemble.local_law_error(cfg, args.z, eta, t, sol=sol)
            worst_inf = max(worst_inf, rep.err_inf * math.sqrt(n * eta))
            worst_avg = max(worst_avg, rep.err_avg * n * eta)
        print(f"{n:>6} {eta:>10.4f} {worst_inf:>15.3f} {worst_avg:>15.3f}")


if __name__ == "__main__":
    main()
