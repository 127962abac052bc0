"""Print chain bounds for the golden family over a range of N.

    python3 scripts/golden_chain.py --Ns 1 2 3 4 --samples 32
"""
import argparse

from afprop.metrics import chain_report
from afprop.towers import golden_family


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--Ns", type=int, nargs="+", default=[1, 2, 3, 4])
    ap.add_argument("--extra", type=int, default=2, help="compare member k = N + extra with the limit")
    ap.add_argument("--samples", type=int, default=32)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    K = max(args.Ns) + args.extra
    fam = golden_family(K, max(args.Ns) + 1)
    print(f"{'N':>3} {'k':>3} {'2B(N)':>10} {'bridge':>12} {'bound':>12} {'weight dist':>12}  verified")
    for N in args.Ns:
        for row in chain_report(fam, N + args.extra, [N], args.samples, args.seed):
            print(f"{row.N:>3} {row.k:>3} {str(row.two_B_N):>10} {row.bridge:12.4e} {row.bound:12.6f} "
                  f"{float(row.weight_distance):12.4e}  {row.certificate.verified}")


if __name__ == "__main__":
    main()
