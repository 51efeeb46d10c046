#!/usr/bin/env python3
"""Generate the toy corpus and pre-train on it; prints the loss curve every 20 steps."""

import argparse
import time
from pathlib import Path

from _common import ensure_corpora, load

from signlink.model import collate
from signlink.train import pretrain_loop, retrieval_top1


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--work", type=Path, default=Path("runs/toy"))
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--steps", type=int, default=200)
    ap.add_argument("--fusion", type=int, default=1)
    a = ap.parse_args()

    sent, _ = ensure_corpora(a.work)
    cfg = load("toy_pretrain.cfg", sent, a.work / "pre", seed=a.seed, max_steps=a.steps, fusion_layers=a.fusion)
    t0 = time.perf_counter()
    res = pretrain_loop(cfg)
    for row in res.trace[::20] + res.trace[-1:]:
        print(f"step {row['step']:4d}  total {row['total']:.4f}  global {row['hal_global']:.4f}  local {row['hal_local']:.4f}  stm {row['stm']:.4f}  lm {row['lm']:.4f}")
    top1 = retrieval_top1(res.model, collate(res.manifest.split("train")[:16], res.vocab, "pretrain"))
    ref = res.trace[min(10, len(res.trace) - 1)]["total"]
    print(f"ratio to step 10: {res.trace[-1]['total'] / ref:.3f}   retrieval top-1: {100 * top1:.0f}%   {time.perf_counter() - t0:.0f}s")
    print(f"checkpoint: {res.checkpoint}")


if __name__ == "__main__":
    main()
