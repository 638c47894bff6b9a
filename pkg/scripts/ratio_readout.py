"""Exact remainder readout: counter means and their normalized difference versus phase."""

import argparse
import math

import numpy as np

from spnl import analytic
from spnl.schemes import ReferenceSpec, remainder_ratio, run_scheme3_exact


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--alpha", type=float, nargs="+", default=[math.sqrt(2), 2.0, 4.0])
    p.add_argument("--points", type=int, default=8)
    args = p.parse_args()

    print("alpha   dphi     N15      N16      ratio     cos(dphi+pi/2)  printed N15+N16")
    for alpha in args.alpha:
        ref = ReferenceSpec.coherent(alpha)
        for d in np.linspace(0, 2 * np.pi, args.points, endpoint=False):
            r = run_scheme3_exact(0.0, 0.0, ref, ref, phi_b=float(d))
            n15, n16 = r.remainder_means
            printed = analytic.scheme3_remainder_intensities(d, alpha)
            print(f"{alpha:5.3f}  {d:6.3f}  {n15:7.4f}  {n16:7.4f}  {remainder_ratio(n15, n16):+8.5f}"
                  f"  {math.cos(d + math.pi / 2):+8.5f}        {printed[0] + printed[1]:.4f}")


if __name__ == "__main__":
    main()
