"""Bracket antisymmetry, SUPG coercivity and complex checks on small meshes.

Example::

    python3 scripts/structural_checks.py --trials 20 --seed 1
"""
import argparse
import warnings

import numpy as np

from ecsupg import cases
from ecsupg.cli import perturbed_state
from ecsupg.diagnostics import check_bracket_antisymmetry, coercivity_check, complex_check
from ecsupg.mesh import build_mesh


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--trials", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n", type=int, default=4, help="cells per direction")
    args = p.parse_args()
    warnings.simplefilter("ignore")
    rng = np.random.default_rng(args.seed)
    for k in (1, 2, 3):
        for periodic in (True, False):
            div_r, curl_r = complex_check(build_mesh(args.n, args.n, 1.0, 1.0, periodic_z=periodic), k)
            print(f"complex k={k} periodic_z={periodic}: div {div_r:.2e} curl {curl_r:.2e}")
    setups = {
        "euler": cases.resting_slice(args.n, args.n, k=2),
        "swe": cases.planar_swe_balanced(n=args.n, L=4.0e5, k=2),
    }
    for label, setup in setups.items():
        tau = 0.5 * setup.config.dt
        ec, nec, margin = [], [], []
        for _ in range(args.trials):
            z = perturbed_state(setup, rng)
            ec.append(check_bracket_antisymmetry(z, setup.constants, tau, "ec"))
            nec.append(check_bracket_antisymmetry(z, setup.constants, tau, "nec"))
            r = coercivity_check(setup.disc, tau, z.u)
            margin.append(r.lambda_min - r.bound)
        print(f"{label}: EC asymmetry max {max(ec):.2e}, NEC asymmetry min {min(nec):.2e}, coercivity margin min {min(margin):.3e}")


if __name__ == "__main__":
    main()
