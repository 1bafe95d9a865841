"""Backward-Euler refinement: exact linear decay and the nonsmooth nonlinear case.

The linear case starts from the lowest generalized eigenvector, so the
exact solution is exp(-lambda t) phi and both the self-convergence error
and the true error are reported.
"""

import argparse
import csv
import sys

import numpy as np
import scipy.linalg as sl

from cbfhvi.cbf2d import GridSpec, build_space, interpolate
from cbfhvi.operators import CbfParams
from cbfhvi.rothe import convergence_study
from cbfhvi.superpotential import heaviside_law, zero_law


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=16)
    ap.add_argument("--N", type=int, nargs="+", default=[25, 50, 100, 200])
    ap.add_argument("--seed", type=int, default=8)
    args = ap.parse_args(argv)
    d = build_space(GridSpec(args.n, args.n), trace_scale=0.2)
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(["case", "N", "e_N", "ratio", "d_N", "exact_error"])

    p = CbfParams(0.1, 0.1, 0.0, 1.0, convection=False)
    K = (p.mu * d.space.gram_V + p.alpha * d.space.gram_H).toarray()
    lam, vecs = sl.eigh(K, d.space.gram_H.toarray())
    phi = vecs[:, 0]
    rows = convergence_study(d.ops, p, zero_law(), d.trace, phi, np.zeros(d.space.n), 1.0, args.N,
                             exact=lambda t: np.exp(-lam[0] * t) * phi)
    _emit(w, "linear", rows)

    rng = np.random.default_rng(args.seed)
    f0 = 0.1 * rng.standard_normal(d.space.n)
    y0 = 0.3 * interpolate(d, lambda x, y: np.cos(np.pi * x) * np.cos(np.pi * y))
    rows = convergence_study(d.ops, CbfParams(1.0, 0.1, 1.0, 3.0), heaviside_law(), d.trace, y0,
                             lambda t: f0 * np.sin(2 * np.pi * t), 1.0, args.N)
    _emit(w, "heaviside-r3", rows)


def _emit(w, case, rows):
    for a, b in zip(rows, rows[1:] + [None]):
        ratio = a.e_N / b.e_N if b is not None else float("nan")
        w.writerow([case, a.N, a.e_N, ratio, a.d_N, a.exact_error])


if __name__ == "__main__":
    main()
