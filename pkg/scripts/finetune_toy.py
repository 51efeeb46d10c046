#!/usr/bin/env python3
"""Fine-tune a checkpoint on one toy task and print the split reports."""

import argparse
import time
from pathlib import Path

from _common import ensure_corpora, load

from signlink.train import finetune_loop


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--task", choices=("islr", "cslr", "slt"), required=True)
    ap.add_argument("--from", dest="ckpt", type=Path, default=None, help="pre-trained checkpoint (omit for --mode none)")
    ap.add_argument("--mode", default="sign_and_sgt", choices=("none", "sign_only", "sign_and_sgt", "full"))
    ap.add_argument("--work", type=Path, default=Path("runs/toy"))
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--epochs", type=int, default=None)
    a = ap.parse_args()

    sent, iso = ensure_corpora(a.work)
    if a.task == "islr":
        cfg = load("toy_islr.cfg", iso, a.work / f"ft_{a.mode}", transfer_mode=a.mode, seed=a.seed)
    else:
        cfg = load("toy_seq.cfg", sent, a.work / f"ft_{a.mode}", task=a.task, transfer_mode=a.mode, seed=a.seed)
    if a.epochs:
        cfg = cfg.replace(epochs=a.epochs)
    t0 = time.perf_counter()
    res = finetune_loop(cfg, a.ckpt)
    print(f"copied {len(res.transfer.copied)} / fresh {len(res.transfer.fresh)} parameter arrays")
    for split, rep in res.reports.items():
        print(f"{split:5s} {rep.line()}")
    print(f"{time.perf_counter() - t0:.0f}s  checkpoint: {res.checkpoint}")


if __name__ == "__main__":
    main()
