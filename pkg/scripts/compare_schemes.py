"""Energy error, mass drift and noise diagnostics of every scheme on the falling bubble.

Example::

    python3 scripts/compare_schemes.py --steps 100 --out schemes.csv
"""
import argparse
import csv
import time
import warnings

import numpy as np

from ecsupg.cases import straka_falling_bubble
from ecsupg.diagnostics import series
from ecsupg.timestepping import RunConfig, run

RUNS = {
    "ec_supg_32": dict(picard_iters=32),
    "nec_bracket_32": dict(picard_iters=32, scheme="nec_bracket"),
    "approx_midpoint_4": dict(picard_iters=4, scheme="ec_full_upwind_approx"),
    "approx_averaged_4": dict(picard_iters=4, scheme="ec_full_upwind_approx", averaged_velocity=True),
    "ec_tau0_32": dict(picard_iters=32, tau=0.0),
    "nec_direct_32": dict(picard_iters=32, scheme="nec_direct"),
}


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--resolution", type=float, default=400.0)
    p.add_argument("--steps", type=int, default=100)
    p.add_argument("--dt", type=float, default=2.0)
    p.add_argument("--only", nargs="*", choices=sorted(RUNS))
    p.add_argument("--out", help="CSV file with one row per scheme")
    args = p.parse_args()
    warnings.simplefilter("ignore")
    case = straka_falling_bubble(resolution=args.resolution)
    rows = []
    for name in args.only or RUNS:
        t0 = time.perf_counter()
        records, _, _ = run(case, RunConfig(dt=args.dt, n_steps=args.steps, **RUNS[name]))
        mass = series(records, "mass")
        theta_max = series(records, "theta_max")
        theta_min = series(records, "theta_min")
        row = dict(
            run=name,
            max_rel_energy_err=float(np.abs(series(records, "rel_energy_err")).max()),
            max_rel_mass_drift=float(np.abs(mass - mass[0]).max() / mass[0]),
            theta_overshoot=float(theta_max.max() - theta_max[0]),
            theta_undershoot=float(theta_min[0] - theta_min.min()),
            final_dg_u=float(records[-1].dg_u),
            final_dg_rho=float(records[-1].dg_rho),
            seconds=time.perf_counter() - t0,
        )
        rows.append(row)
        print(", ".join(f"{k}={v:.4g}" if isinstance(v, float) else f"{k}={v}" for k, v in row.items()), flush=True)
    if args.out:
        with open(args.out, "w", newline="\n") as fh:
            w = csv.DictWriter(fh, fieldnames=list(rows[0]))
            w.writeheader()
            w.writerows(rows)


if __name__ == "__main__":
    main()
