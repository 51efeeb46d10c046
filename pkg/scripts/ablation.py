#!/usr/bin/env python3
"""Run one or more pre-training sweeps on the toy corpus and print the rows."""

import argparse
from pathlib import Path

from _common import ensure_corpora, load

from signlink.train import SWEEPS, ablate, format_rows


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("sweeps", nargs="*", default=["alpha", "fusion"], choices=tuple(SWEEPS))
    ap.add_argument("--work", type=Path, default=Path("runs/ablate"))
    ap.add_argument("--steps", type=int, default=100)
    a = ap.parse_args()

    sent, _ = ensure_corpora(a.work)
    for sweep in a.sweeps:
        cfg = load("toy_pretrain.cfg", sent, a.work / sweep, max_steps=a.steps)
        print(format_rows(ablate(cfg, sweep)), end="", flush=True)


if __name__ == "__main__":
    main()
