"""Twin-solve agreement across a mu grid, against the computed uniqueness threshold.

Agreement is recorded on both sides of the threshold; only points above it
are asserted, so "skipped" rows with agree=True are expected.
"""

import argparse
import dataclasses

from cbfhvi import harness_cli as cli


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default=None)
    ap.add_argument("--mu", type=float, nargs="+", default=[0.2, 0.4, 0.5, 0.55, 0.6, 1.0, 2.0])
    ap.add_argument("--jobs", type=int, default=1)
    args = ap.parse_args(argv)
    cfg = dataclasses.replace(cli.load_config(args.config), sweep_mu=tuple(args.mu), jobs=args.jobs)
    reports = cli._map(lambda mu: cli._sweep_point(cfg, mu), sorted(cfg.sweep_mu), 1)
    print(f"{'mu':>6} {'threshold':>10} {'status':>8} {'gap_V':>10} agree")
    for rep in reports:
        print(f"{rep.params['mu']:6.3f} {rep.extra.get('threshold', float('nan')):10.4f} {rep.status:>8} "
              f"{rep.lhs:10.2e} {rep.extra.get('agree', rep.passed)}")


if __name__ == "__main__":
    main()
