"""Convergence of the balanced shallow water jet under mesh refinement.

The theta error is measured against the initial state at every step; the
largest value over the run and the final value are reported per mesh.

Example::

    python3 scripts/swe_convergence.py --meshes 16 32 64 --steps 200 --degree 1
"""
import argparse
import warnings

import numpy as np

from ecsupg.cases import planar_swe_balanced
from ecsupg.diagnostics import l2_error
from ecsupg.timestepping import run


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--meshes", type=int, nargs="+", default=[16, 32, 64])
    p.add_argument("--steps", type=int, default=200)
    p.add_argument("--degree", type=int, default=1)
    p.add_argument("--scheme", default="ec_supg")
    args = p.parse_args()
    warnings.simplefilter("ignore")
    sup, final = [], []
    for n in args.meshes:
        case = planar_swe_balanced(n=n, k=args.degree)
        errs = []
        cfg = case.config.with_(n_steps=args.steps, scheme=args.scheme)
        records, _, _ = run(case, cfg, callback=lambda i, z, log: errs.append(l2_error(case.disc, "t", z.theta, case.state.theta)))
        sup.append(max(errs))
        final.append(errs[-1])
        print(f"n={n} max_error={sup[-1]:.6e} final_error={final[-1]:.6e} rel_energy_err={records[-1].rel_energy_err:.3e}", flush=True)
    if len(args.meshes) > 1:
        print("max-error ratios:", np.round(np.array(sup[:-1]) / np.array(sup[1:]), 4).tolist())
        print("final-error ratios:", np.round(np.array(final[:-1]) / np.array(final[1:]), 4).tolist())


if __name__ == "__main__":
    main()
