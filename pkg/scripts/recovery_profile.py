"""Monte Carlo histogram of GC+ outcomes on a homogeneous network."""

import argparse
import json

from cogc.channel import NetworkModel
from cogc.experiments import mc_recovery_profile


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--M", type=int, default=10)
    ap.add_argument("--s", type=int, default=7)
    ap.add_argument("--t-r", type=int, default=2)
    ap.add_argument("--p-c2c", type=float, default=0.25)
    ap.add_argument("--p-up", type=float, default=0.4)
    ap.add_argument("--trials", type=int, default=10_000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    net = NetworkModel.uniform(args.M, args.p_c2c, args.p_up)
    prof = mc_recovery_profile(net, args.s, args.t_r, args.trials, seed=args.seed)
    total = sum(prof.counts.values())
    for label, n in sorted(prof.counts.items()):
        print(f"{label:<14} {n:>8} {n / total:8.4f}")
    print(f"modal: {prof.modal_bin()}")
    print(json.dumps({"max_rel_error": prof.max_rel_error}))


if __name__ == "__main__":
    main()
