import os

os.environ.setdefault("OMP_NUM_THREADS", "1")

import numpy as np
import pytest

from signlink import numerics as nx
from signlink.data import generate_corpus, load_manifest
from signlink.model import ModelConfig
from signlink.train import corpus_vocab

TINY = ModelConfig(d_part=4, d_model=8, heads=2, depth=2, d_proj=8, stm_blocks=1, lm_blocks=1, fusion_layers=1, max_frames=128)


@pytest.fixture(autouse=True)
def _checked_mode():
    prev = nx.set_checked(True)
    yield
    nx.set_checked(prev)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def tiny_corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("corpus")
    generate_corpus(root, seed=3, num_glosses=4, num_sentences=6, noise_std=0.02, isolated_per_gloss=3)
    return load_manifest(root / "manifest.tsv")


@pytest.fixture(scope="session")
def tiny_vocab(tiny_corpus):
    return corpus_vocab(tiny_corpus, 1000)


@pytest.fixture
def tiny_cfg(tiny_corpus, tmp_path):
    """Pre-training config over the tiny corpus; a few steps only."""
    from dataclasses import asdict

    from signlink.train import TrainConfig

    return TrainConfig(
        manifest=str(tiny_corpus.root / "manifest.tsv"),
        out_dir=str(tmp_path / "run"),
        batch_size=4,
        max_steps=3,
        base_lr=1e-3,
        **asdict(TINY),
    )


# criterion number -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
