"""HTA/LTA and kappa for judges that guess uniformly at random.

Useful as a floor when reading real judge reports: HTA and LTA sit near 0.5
and kappa near 0.
"""

import argparse
import random

from dyadtraits.metrics import fleiss_kappa_table


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--items", type=int, default=10_000)
    ap.add_argument("--judges", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    rng = random.Random(args.seed)

    assigned = [rng.random() < 0.5 for _ in range(args.items)]
    votes = [[rng.random() < 0.5 for _ in range(args.judges)] for _ in range(args.items)]
    for j in range(args.judges):
        hi = [v[j] for a, v in zip(assigned, votes) if a]
        lo = [not v[j] for a, v in zip(assigned, votes) if not a]
        print(f"judge {j}: HTA={sum(hi) / len(hi):.3f} LTA={sum(lo) / len(lo):.3f}")
    table = [(sum(v), args.judges - sum(v)) for v in votes]
    kappa, _ = fleiss_kappa_table(table)
    print(f"Fleiss kappa over {args.items} items x {args.judges} judges: {kappa:.4f}")


if __name__ == "__main__":
    main()
