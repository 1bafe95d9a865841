"""Spatial refinement of the discrete norms and of the norm-equivalence constants.

Writes one CSV row per grid: the H and V errors of the Taylor-Green stream
function against their exact values, observed orders, the two
norm-equivalence constants and the trace norm.
"""

import argparse
import csv
import sys

import numpy as np

from cbfhvi.cbf2d import GridSpec, build_space, interpolate
from cbfhvi.state_space import norm_equivalence_constants, norm_H, norm_V


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--grids", type=int, nargs="+", default=[16, 32, 64])
    ap.add_argument("--out", default="-")
    args = ap.parse_args(argv)
    s = lambda x, y: np.cos(np.pi * x) * np.cos(np.pi * y)
    rows, prev = [], None
    for n in args.grids:
        d = build_space(GridSpec(n, n))
        y = interpolate(d, s)
        eH = abs(norm_H(d.space, y) ** 2 - np.pi**2 / 2)
        eV = abs(norm_V(d.space, y) ** 2 - np.pi**4)
        lo, hi = norm_equivalence_constants(d.space)
        oH = oV = float("nan")
        if prev is not None:
            oH, oV = np.log2(prev[0] / eH), np.log2(prev[1] / eV)
        rows.append([n, eH, eV, oH, oV, lo, hi, d.trace.op_norm])
        prev = (eH, eV)
    fh = sys.stdout if args.out == "-" else open(args.out, "w", newline="")
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["n", "err_H", "err_V", "order_H", "order_V", "c_low", "c_high", "trace_norm"])
    w.writerows(rows)


if __name__ == "__main__":
    main()
