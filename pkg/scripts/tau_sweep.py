"""Sweep the bias-correction probability for DCL+GCL on the synthetic block dataset.

    python scripts/tau_sweep.py --seeds 0 1 --taus 0 1e-5 1e-4 1e-3 1e-2 1e-1
"""
import argparse

import numpy as np

from graphcl_rec.experiments import TAU_GRID, desk_split, run_desk


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    ap.add_argument("--taus", type=float, nargs="+", default=list(TAU_GRID))
    ap.add_argument("--patience", type=int, default=30)
    args = ap.parse_args()

    print("seed," + ",".join(f"tau={t:g}" for t in args.taus) + ",argmax")
    for seed in args.seeds:
        split = desk_split(seed)
        recalls = [run_desk("DCL+GCL", seed, split, patience=args.patience, tau_plus=t).best_recall
                   for t in args.taus]
        print(f"{seed}," + ",".join(f"{r:.4f}" for r in recalls) + f",{args.taus[int(np.argmax(recalls))]:g}",
              flush=True)


if __name__ == "__main__":
    main()
