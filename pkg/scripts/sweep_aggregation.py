"""Coarse (alpha, K) sweep for the softmax aggregation on synthetic
validation data.

Trains a desk-scale model on zero-noise data, then grids alpha and top-K
for the joint-wise and pose-wise modes on a held-out validation split and
prints MPJPE / P-MPJPE per cell. The shipped CLI defaults were chosen
from this sweep.

Usage: python scripts/sweep_aggregation.py [--noise-std 0.015] [--out DIR]
"""

from __future__ import annotations

import argparse
import time
from pathlib import Path

import numpy as np

from flowlift.aggregate import RpeaConfig
from flowlift.data import generate
from flowlift.evaluate import per_sample_errors, sample_hypothesis_sets
from flowlift.flow import FlowConfig, Model, train
from flowlift.network import NetConfig
from flowlift.report import write_csv
from flowlift.skeleton import human17

ALPHAS = (0.0, 30.0, 100.0, 300.0, 1000.0)
TOP_KS = (10, 14, 20)


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--train-samples", type=int, default=5000)
    ap.add_argument("--val-samples", type=int, default=500)
    ap.add_argument("--noise-std", type=float, default=0.015,
                    help="2D noise on the validation split")
    ap.add_argument("--hypotheses", type=int, default=20)
    ap.add_argument("--steps", type=int, default=3)
    ap.add_argument("--checkpoint", type=Path, default=None,
                    help="reuse an existing model instead of training")
    ap.add_argument("--out", type=Path, default=Path("."))
    args = ap.parse_args()

    skel = human17()
    if args.checkpoint is not None:
        model = Model.load(args.checkpoint)
    else:
        train_set = generate(skel, args.train_samples, 0.0, seed=11)
        t0 = time.perf_counter()
        model, _ = train(train_set.poses3d, train_set.poses2d, skel,
                         NetConfig(seed=0), FlowConfig(seed=0))
        print(f"trained in {time.perf_counter() - t0:.1f}s")

    val = generate(skel, args.val_samples, args.noise_std, seed=13)
    sets = sample_hypothesis_sets(model, val, args.hypotheses, args.steps,
                                  seed=100, fha=True)

    rows = []
    for mode in ("joint", "pose"):
        best = None
        for alpha in ALPHAS:
            for k in TOP_KS:
                cfg = RpeaConfig(alpha=alpha, top_k=k, mode=mode)
                e1, e2 = per_sample_errors(val, sets, f"rpea-{mode}", cfg)
                row = {"mode": mode, "alpha": alpha, "top_k": k,
                       "mpjpe": float(e1.mean()), "p_mpjpe": float(e2.mean())}
                rows.append(row)
                key = "mpjpe" if mode == "joint" else "p_mpjpe"
                if best is None or row[key] < best[key]:
                    best = row
                print(f"{mode:<5} alpha={alpha:<7g} K={k:<3d} "
                      f"MPJPE {row['mpjpe']:8.3f}  P-MPJPE {row['p_mpjpe']:8.3f}")
        print(f"best {mode}: alpha={best['alpha']} K={best['top_k']}")

    args.out.mkdir(parents=True, exist_ok=True)
    write_csv(args.out / "sweep.csv", rows,
              ["mode", "alpha", "top_k", "mpjpe", "p_mpjpe"])
    print(f"wrote {args.out / 'sweep.csv'}")


if __name__ == "__main__":
    main()
