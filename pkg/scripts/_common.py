"""Helpers shared by the experiment scripts."""

from __future__ import annotations

import os

os.environ.setdefault("OMP_NUM_THREADS", "1")

from pathlib import Path

from signlink.data import generate_corpus
from signlink.train import TrainConfig

HERE = Path(__file__).resolve().parent
CONFIGS = HERE / "configs"


def ensure_corpora(root: Path, seed: int = 0) -> tuple[Path, Path]:
    """Sentence corpus and the isolated-clip corpus used by the toy configs."""
    sent, iso = root / "corpus" / "manifest.tsv", root / "islr" / "manifest.tsv"
    if not sent.exists():
        generate_corpus(sent.parent, seed=seed, num_glosses=10, num_sentences=20, noise_std=0.05)
    if not iso.exists():
        generate_corpus(iso.parent, seed=seed, num_glosses=10, num_sentences=20, noise_std=0.05, isolated_per_gloss=12)
    return sent, iso


def load(name: str, manifest: Path, out: Path, **kw) -> TrainConfig:
    cfg = TrainConfig.parse((CONFIGS / name).read_text(encoding="utf-8"))
    return cfg.replace(manifest=str(manifest), out_dir=str(out), **kw)
