"""Print outage probability, expected retries and transmissions for each s."""

import argparse

from cogc.analysis import design_table
from cogc.channel import NetworkModel


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--M", type=int, default=10)
    ap.add_argument("--p-c2c", type=float, default=0.1)
    ap.add_argument("--p-up", type=float, default=0.1)
    args = ap.parse_args()
    net = NetworkModel.uniform(args.M, args.p_c2c, args.p_up)
    print(f"{'s':>3} {'P_O':>10} {'E[retries]':>12} {'tx_max':>7} {'E[tx]':>9}")
    for row in design_table(net):
        print(f"{row.s:>3} {row.P_O:>10.6f} {row.E_retries:>12.4f} {row.tx_max:>7} {row.tx_expected:>9.3f}")


if __name__ == "__main__":
    main()
