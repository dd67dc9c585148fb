"""Per-epoch recall@20 curves of BPR, DCL and DCL+GCL for one seed, as CSV on stdout.

    python scripts/convergence.py --seed 0 > curves.csv
"""
import argparse

from graphcl_rec.experiments import desk_split, run_desk

VARIANTS = ("BPR", "DCL", "DCL+GCL")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--epochs", type=int, default=100)
    args = ap.parse_args()

    split = desk_split(args.seed)
    curves = {v: {r["epoch"]: r["recall"] for r in run_desk(v, args.seed, split, epochs=args.epochs,
                                                              patience=0).history}
              for v in VARIANTS}
    print("epoch," + ",".join(VARIANTS))
    for epoch in range(1, args.epochs + 1):
        print(f"{epoch}," + ",".join(str(curves[v].get(epoch, "")) for v in VARIANTS))


if __name__ == "__main__":
    main()
