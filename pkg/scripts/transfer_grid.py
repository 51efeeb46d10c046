#!/usr/bin/env python3
"""Held-out ISLR accuracy for every transfer mode, averaged over seeds.

Pre-trains once per pre-training seed, then fine-tunes each mode from that
checkpoint. Prints one row per mode with the per-seed and mean pooled
dev+test P-I.
"""

import argparse
from pathlib import Path

import numpy as np

from _common import ensure_corpora, load

from signlink.tasks import TRANSFER_MODES
from signlink.train import finetune_loop, pretrain_loop


def pooled(res):
    d, t = res.reports["dev"], res.reports["test"]
    return (d.values["P-I"] * d.count + t.values["P-I"] * t.count) / (d.count + t.count)


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--work", type=Path, default=Path("runs/grid"))
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--epochs", type=int, default=60)
    ap.add_argument("--fusion", type=int, default=1)
    a = ap.parse_args()

    sent, iso = ensure_corpora(a.work)
    table = {m: [] for m in TRANSFER_MODES}
    for seed in a.seeds:
        pre = pretrain_loop(load("toy_pretrain.cfg", sent, a.work / f"pre{seed}", seed=seed, fusion_layers=a.fusion))
        for mode in TRANSFER_MODES:
            cfg = load("toy_islr.cfg", iso, a.work / f"s{seed}_{mode}", seed=seed, transfer_mode=mode, epochs=a.epochs)
            table[mode].append(pooled(finetune_loop(cfg, pre.checkpoint)))
            print(f"seed {seed} {mode:13s} {table[mode][-1]:6.1f}", flush=True)
    print("mode\t" + "\t".join(f"seed{s}" for s in a.seeds) + "\tmean")
    for mode, vals in table.items():
        print(f"{mode}\t" + "\t".join(f"{v:.1f}" for v in vals) + f"\t{np.mean(vals):.1f}")


if __name__ == "__main__":
    main()
