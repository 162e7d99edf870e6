"""Two-sideband cooling sweep: local maxima of 1 - P0 for each sideband order.

    python3 scripts/two_sideband_summary.py [--gamma G] [--points N]
"""
import argparse

import numpy as np

from ionsim.cli import ExperimentConfig, run


def local_maxima(x, y):
    return [float(x[i]) for i in range(1, len(y) - 1) if y[i] > y[i - 1] and y[i] > y[i + 1]]


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--gamma", type=float, default=0.1)
    ap.add_argument("--points", type=int, default=60)
    ap.add_argument("--n-max", type=int, default=100)
    args = ap.parse_args(argv)
    config = ExperimentConfig.from_dict({
        "kind": "cool_double",
        "parameters": {"eta2": {"start": 0.0, "stop": 3.0, "points": args.points},
                       "gamma": args.gamma, "m": [1, 2, 3, 4], "alpha": "inverse_3eta2",
                       "n_max": args.n_max}})
    table = run(config)
    e2, m, deficit = table.column("eta2"), table.column("m"), table.column("ground_deficit")
    for k in (1, 2, 3, 4):
        sel = (m == k) & np.isfinite(deficit)
        best = e2[sel][np.argmin(deficit[sel])]
        peaks = ", ".join(f"{p:.2f}" for p in local_maxima(e2[sel], deficit[sel]))
        print(f"m={k}: min 1-P0 = {deficit[sel].min():.3e} at eta^2 = {best:.2f}; "
              f"local maxima at eta^2 = [{peaks}]")


if __name__ == "__main__":
    main()
