"""Smallest s meeting an outage target, for a grid of link qualities."""

import argparse

from cogc.analysis import cost_efficient_s, design_row
from cogc.channel import NetworkModel
from cogc.errors import InfeasibleTargetError


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--M", type=int, default=10)
    ap.add_argument("--target", type=float, default=0.5)
    args = ap.parse_args()
    grid = [0.05, 0.1, 0.2, 0.3, 0.4]
    print(f"{'p':>5} {'s*':>3} {'P_O':>9} {'E[tx]':>8}")
    for p in grid:
        net = NetworkModel.uniform(args.M, p, p)
        try:
            s = cost_efficient_s(net, args.target)
        except InfeasibleTargetError:
            print(f"{p:>5} {'-':>3}")
            continue
        row = design_row(net, s)
        print(f"{p:>5} {s:>3} {row.P_O:>9.5f} {row.tx_expected:>8.2f}")


if __name__ == "__main__":
    main()
