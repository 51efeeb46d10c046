"""Synthetic sign corpora and keypoint file I/O.

SKL1 layout (little-endian): b"SKL1", u32 L, u32 K (=69), u32 C (=2), then
L*K*C float32 values in row-major order.

Manifest layout: one sample per line, ``<skl-path>\\t<text>\\t<glosses>\\t<split>``,
with paths relative to the manifest's directory.
"""

from __future__ import annotations

import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .skeleton import NUM_KEYPOINTS, PART_SLICES, PARTS, SkeletonSequence

MAGIC = b"SKL1"
HEADER = struct.Struct("<4sIII")
SPLITS = ("train", "dev", "test")
INVENTORY = "glosses.tsv"


class FormatError(ValueError):
    """Malformed SKL1 file or manifest."""


def _atomic_write(path: Path, payload: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_skl(path: str | Path, seq: SkeletonSequence | np.ndarray) -> None:
    frames = seq.frames if isinstance(seq, SkeletonSequence) else SkeletonSequence(seq).frames
    body = np.ascontiguousarray(frames, dtype="<f4").tobytes()
    _atomic_write(Path(path), HEADER.pack(MAGIC, frames.shape[0], NUM_KEYPOINTS, 2) + body)


def read_skl(path: str | Path) -> SkeletonSequence:
    raw = Path(path).read_bytes()
    if len(raw) < HEADER.size:
        raise FormatError(f"{path}: truncated header ({len(raw)} bytes)")
    magic, length, k, c = HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
    if k != NUM_KEYPOINTS or c != 2:
        raise FormatError(f"{path}: expected K={NUM_KEYPOINTS}, C=2, got K={k}, C={c}")
    expected = HEADER.size + length * k * c * 4
    if len(raw) != expected:
        raise FormatError(f"{path}: size {len(raw)} bytes, header implies {expected}")
    frames = np.frombuffer(raw, dtype="<f4", offset=HEADER.size).reshape(length, k, c)
    return SkeletonSequence(frames.astype(np.float64))


@dataclass(frozen=True)
class Sample:
    path: Path
    text: str
    glosses: tuple[str, ...]
    split: str

    @property
    def sample_id(self) -> str:
        return self.path.stem


@dataclass
class CorpusManifest:
    samples: list[Sample] = field(default_factory=list)
    root: Path | None = None

    def split(self, name: str) -> list[Sample]:
        if name not in SPLITS:
            raise ValueError(f"unknown split {name!r}; choose from {SPLITS}")
        return [s for s in self.samples if s.split == name]

    def __len__(self) -> int:
        return len(self.samples)

    def inventory(self) -> list[tuple[str, str]]:
        """(gloss, word) pairs from the corpus inventory file, if present."""
        if self.root is None or not (self.root / INVENTORY).exists():
            return []
        rows = (self.root / INVENTORY).read_text(encoding="utf-8").splitlines()
        return [tuple(r.split("\t")) for r in rows if r]


def load_manifest(path: str | Path) -> CorpusManifest:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"manifest not found: {path}")
    root = path.parent
    samples, seen = [], {}
    for n, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        fields = line.split("\t")
        if len(fields) != 4:
            raise FormatError(f"{path}:{n}: expected 4 tab-separated fields, got {len(fields)}")
        rel, text, glosses, split = fields
        if split not in SPLITS:
            raise FormatError(f"{path}:{n}: unknown split {split!r}")
        if not text.strip() or not glosses.strip():
            raise FormatError(f"{path}:{n}: empty text or gloss field")
        skl = (root / rel).resolve()
        if not skl.exists():
            raise FormatError(f"{path}:{n}: missing skeleton file {rel}")
        if skl in seen:
            raise FormatError(f"{path}:{n}: {rel} already listed on line {seen[skl]}")
        seen[skl] = n
        samples.append(Sample(skl, text, tuple(glosses.split()), split))
    return CorpusManifest(samples, root)


def write_manifest(path: str | Path, manifest: CorpusManifest) -> None:
    path = Path(path)
    lines = []
    for s in manifest.samples:
        rel = os.path.relpath(s.path, path.parent)
        lines.append(f"{rel}\t{s.text}\t{' '.join(s.glosses)}\t{s.split}\n")
    _atomic_write(path, "".join(lines).encode("utf-8"))


# ---------------------------------------------------------------------------
# Synthetic generation
# ---------------------------------------------------------------------------

_ONSETS = ("b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z")
_VOWELS = ("a", "e", "i", "o", "u")


@dataclass
class GlossMotif:
    gloss: str
    word: str
    dominant: str
    amplitude: dict[str, float]
    frequency: dict[str, float]
    phase: np.ndarray  # [69, 2]
    duration: int

    def render(self, base: np.ndarray) -> np.ndarray:
        t = np.arange(self.duration)[:, None, None]
        frames = np.repeat(base[None], self.duration, axis=0)
        for p in PARTS:
            sl = PART_SLICES[p]
            wave = np.sin(2 * np.pi * self.frequency[p] * t / self.duration + self.phase[None, sl])
            frames[:, sl] += self.amplitude[p] * wave
        return frames

    def fingerprint(self) -> tuple:
        return (self.dominant, self.duration, round(self.amplitude[self.dominant], 12), self.phase.tobytes())


def _pseudo_word(rng: np.random.Generator, taken: set[str]) -> str:
    while True:
        n = int(rng.integers(2, 4))
        w = "".join(str(rng.choice(_ONSETS)) + str(rng.choice(_VOWELS)) for _ in range(n))
        if w not in taken:
            taken.add(w)
            return w


def make_motifs(seed: int, num_glosses: int) -> tuple[np.ndarray, list[GlossMotif]]:
    """Base pose and one motif per gloss; depends only on (seed, num_glosses)."""
    if num_glosses < 2:
        raise ValueError("need at least 2 glosses")
    base = np.random.default_rng([seed, 0]).uniform(0.3, 0.7, size=(NUM_KEYPOINTS, 2))
    names: set[str] = set()
    motifs = []
    for g in range(num_glosses):
        rng = np.random.default_rng([seed, 1, g])
        word = _pseudo_word(rng, names)
        dominant = PARTS[g % 4] if g < 4 else str(rng.choice(PARTS, p=[0.35, 0.35, 0.15, 0.15]))
        amp = {p: float(rng.uniform(0.06, 0.1) if p == dominant else rng.uniform(0.0, 0.015)) for p in PARTS}
        freq = {p: float(rng.uniform(0.5, 2.0)) for p in PARTS}
        phase = rng.uniform(0.0, 2 * np.pi, size=(NUM_KEYPOINTS, 2))
        motifs.append(GlossMotif(word.upper(), word, dominant, amp, freq, phase, int(rng.integers(6, 11))))
    return base, motifs


def compose(motifs: list[GlossMotif], base: np.ndarray, transition: int) -> np.ndarray:
    """Concatenate motifs with ``transition`` linearly interpolated frames
    between consecutive motifs."""
    pieces = [motifs[0].render(base)]
    for nxt in motifs[1:]:
        a, b = pieces[-1][-1], nxt.render(base)
        w = (np.arange(1, transition + 1) / (transition + 1))[:, None, None]
        pieces.append(a[None] * (1 - w) + b[0][None] * w)
        pieces.append(b)
    return np.concatenate(pieces, axis=0)


def generate_corpus(
    out_dir: str | Path,
    seed: int = 0,
    num_glosses: int = 10,
    num_sentences: int = 20,
    noise_std: float = 0.05,
    isolated_per_gloss: int = 0,
    eval_sentences: int | None = None,
    max_glosses_per_sentence: int = 5,
    transition: int = 3,
) -> CorpusManifest:
    """Write a synthetic corpus and its ``manifest.tsv`` under ``out_dir``.

    ``num_sentences`` training sentences plus ``eval_sentences`` (default
    ``max(2, num_sentences // 5)``) each for dev and test. Isolated clips are
    split 1 dev / 1 test / rest train per gloss when ``isolated_per_gloss >= 3``.
    """
    if noise_std < 0:
        raise ValueError("noise_std must be nonnegative")
    out = Path(out_dir)
    base, motifs = make_motifs(seed, num_glosses)
    if eval_sentences is None:
        eval_sentences = max(2, num_sentences // 5) if num_sentences else 0

    plan: list[tuple[tuple[int, ...], str]] = []
    rng = np.random.default_rng([seed, 3])
    used: set[tuple[int, ...]] = set()
    total = num_sentences + 2 * eval_sentences
    top = min(max_glosses_per_sentence, num_glosses)
    while len(plan) < total:
        n = int(rng.integers(1, top + 1))
        seq = tuple(int(g) for g in rng.choice(num_glosses, size=n))
        if seq in used:
            continue
        used.add(seq)
        k = len(plan)
        split = "train" if k < num_sentences else ("dev" if k < num_sentences + eval_sentences else "test")
        plan.append((seq, split))
    for g in range(num_glosses):
        for r in range(isolated_per_gloss):
            split = "train"
            if isolated_per_gloss >= 3:
                split = {0: "dev", 1: "test"}.get(r, "train")
            plan.append(((g,), split))

    samples = []
    for idx, (seq, split) in enumerate(plan):
        srng = np.random.default_rng([seed, 2, idx])
        frames = compose([motifs[g] for g in seq], base, transition)
        if noise_std > 0:
            frames = frames + srng.normal(0.0, noise_std, size=frames.shape)
        frames = np.clip(frames, 0.0, 1.0)
        path = out / "skl" / f"{idx:05d}.skl"
        write_skl(path, frames)
        samples.append(
            Sample(
                path.resolve(),
                " ".join(motifs[g].word for g in seq),
                tuple(motifs[g].gloss for g in seq),
                split,
            )
        )
    manifest = CorpusManifest(samples, out.resolve())
    write_manifest(out / "manifest.tsv", manifest)
    _atomic_write(out / INVENTORY, "".join(f"{m.gloss}\t{m.word}\n" for m in motifs).encode("utf-8"))
    return manifest


def nearest_motif_accuracy(samples: list[Sample], seed: int, num_glosses: int) -> float:
    """Classify single-gloss clips by Pearson correlation with each clean
    motif of equal duration; returns the fraction classified correctly."""
    base, motifs = make_motifs(seed, num_glosses)
    clean = [(m.gloss, (m.render(base) - base).reshape(-1)) for m in motifs]
    hits = 0
    for s in samples:
        x = (read_skl(s.path).frames - base).reshape(-1)
        best, best_r = None, -np.inf
        for gloss, ref in clean:
            if ref.size != x.size:
                continue
            r = np.corrcoef(x, ref)[0, 1]
            if r > best_r:
                best, best_r = gloss, r
        hits += best == s.glosses[0]
    return hits / len(samples)
