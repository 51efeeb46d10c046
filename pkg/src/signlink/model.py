"""Full parameter bundle and batch assembly."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .clusters import ClusterAssignment, compute_offsets
from .data import Sample, read_skl
from .encoders import CoEncodeOutput, EncoderStack, co_encode, encode_sign_only
from .hal import AlignmentBatch, HALConfig, HALTerms, ProjectionHeads, Temperature, hal_terms
from .nn import Linear, Module, param
from .numerics import Tensor
from .sgt import SGTEncoder, lm_loss, sample_negatives, sgt_loss, stm_loss
from .signef import SignEFParams
from .skeleton import SkeletonFrontend
from .text import BOS, CLS, STM, TextEmbedding, Vocabulary, pad_batch, tokenize


@dataclass
class ModelConfig:
    d_part: int = 64
    stgcn_blocks: int = 2
    d_model: int = 128
    heads: int = 4
    depth: int = 6
    d_proj: int = 64
    stm_blocks: int = 2
    lm_blocks: int = 2
    max_len: int = 64
    max_frames: int = 128
    sign_positions: bool = True
    signef_shared: bool = True
    fusion_layers: int = 2
    center: bool = True
    motion: bool = True


class SignTextModel(Module):
    """Sign front end + twin encoders + fusion + alignment heads + SGT encoder."""

    def __init__(self, cfg: ModelConfig, vocab_size: int, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.cfg = cfg
        self.frontend = SkeletonFrontend(rng, cfg.d_part, cfg.stgcn_blocks, cfg.center, cfg.motion)
        self.sign_proj = Linear(rng, 4 * cfg.d_part, cfg.d_model)
        self.sign_pos = param(rng.normal(0.0, 0.02, size=(cfg.max_frames, cfg.d_model))) if cfg.sign_positions else None
        self.sign_enc = EncoderStack(rng, cfg.d_model, cfg.heads, cfg.depth, class_token=True)
        self.embed = TextEmbedding(rng, vocab_size, cfg.d_model, cfg.max_len)
        self.text_enc = EncoderStack(rng, cfg.d_model, cfg.heads, cfg.depth)
        self.signef = SignEFParams(rng, cfg.d_model, cfg.heads, max(cfg.fusion_layers, 1), cfg.signef_shared)
        self.heads = ProjectionHeads(rng, cfg.d_model, cfg.d_proj)
        self.temperature = Temperature()
        self.sgt = SGTEncoder(rng, self.embed, cfg.d_model, cfg.heads, cfg.stm_blocks, cfg.lm_blocks)

    # -- sign side -------------------------------------------------------
    def sign_inputs(self, frames: np.ndarray, lengths: np.ndarray) -> Tensor:
        n = frames.shape[1]
        if n > self.cfg.max_frames:
            raise ValueError(f"{n} frames exceed max_frames={self.cfg.max_frames}")
        mask = np.arange(n)[None, :] < np.asarray(lengths)[:, None]
        h = self.sign_proj(self.frontend(frames, mask))
        return h if self.sign_pos is None else h + self.sign_pos[:n]

    def encode_sign(self, batch: "Batch") -> tuple[Tensor, np.ndarray]:
        """Sign stack alone (no fusion): tokens [B, L+1, D] and their lengths."""
        return encode_sign_only(self.sign_enc, self.sign_inputs(batch.frames, batch.frame_lengths), batch.frame_lengths)

    def co_encode(self, batch: "Batch", fusion_layers: int | None = None) -> CoEncodeOutput:
        f = self.cfg.fusion_layers if fusion_layers is None else fusion_layers
        return co_encode(
            self.sign_enc,
            self.text_enc,
            self.sign_inputs(batch.frames, batch.frame_lengths),
            self.embed(batch.text_ids),
            self.signef,
            f,
            batch.frame_lengths,
            batch.text_lengths,
        )

    # -- pre-training ----------------------------------------------------
    def pretrain_terms(
        self,
        batch: "Batch",
        hal_cfg: HALConfig,
        beta: float,
        neg_seed,
        cond_source: str = "sign",
    ) -> dict[str, Tensor]:
        enc = self.co_encode(batch)
        hal: HALTerms = hal_terms(AlignmentBatch.from_encoded(enc, batch.assignments), self.heads, self.temperature, hal_cfg)
        if cond_source == "sign":
            cond, cond_len = enc.sign_tokens, enc.sign_lengths
        elif cond_source == "text":
            cond, cond_len = enc.text_tokens, enc.text_lengths
        else:
            raise ValueError(f"unknown conditioning source {cond_source!r}")
        mb = sample_negatives(batch.size, neg_seed)
        stm_ids = batch.stm_ids[mb.text_index]
        logits = self.sgt.stm_forward(
            stm_ids,
            nx.take(cond, mb.sign_index, axis=0),
            batch.text_lengths[mb.text_index],
            cond_len[mb.sign_index],
        )
        l_stm = stm_loss(logits, mb.labels)
        l_lm = lm_loss(self.sgt.lm_forward(batch.lm_inputs, batch.lm_lengths), batch.lm_targets)
        l_sgt = sgt_loss(l_stm, l_lm, beta)
        return {
            "hal_global": hal.global_loss,
            "hal_local": hal.local_loss,
            "hal": hal.total,
            "stm": l_stm,
            "lm": l_lm,
            "sgt": l_sgt,
            "total": hal.total + l_sgt,
        }

    # -- fine-tuning -----------------------------------------------------
    def decoder_logits(self, batch: "Batch") -> Tensor:
        cond, cond_len = self.encode_sign(batch)
        return self.sgt.lm_forward(batch.lm_inputs, batch.lm_lengths, cond, cond_len, conditioned=True)


@dataclass
class Batch:
    sample_ids: list[str]
    frames: np.ndarray  # [B, Lmax, 69, 2]
    frame_lengths: np.ndarray
    text_ids: np.ndarray  # [B, T] CLS ... EOS
    text_lengths: np.ndarray
    stm_ids: np.ndarray  # [B, T] STM ... EOS
    assignments: list[ClusterAssignment]
    lm_inputs: np.ndarray  # [B, T-1] BOS w1 .. wn
    lm_targets: np.ndarray  # [B, T-1] w1 .. wn EOS (PAD-padded)
    lm_lengths: np.ndarray
    targets: list[str]

    @property
    def size(self) -> int:
        return len(self.sample_ids)


def task_target(sample: Sample, task: str) -> str:
    """Target text: one gloss (islr), gloss sequence (cslr), sentence (slt or pre-training).

    Gloss labels are case-folded so recognition targets share token rows
    with the text side of pre-training.
    """
    task = task.lower()
    if task == "islr":
        if len(sample.glosses) != 1:
            raise ValueError(f"{sample.sample_id}: isolated recognition needs a single gloss")
        return sample.glosses[0].casefold()
    if task == "cslr":
        return " ".join(g.casefold() for g in sample.glosses)
    if task in ("slt", "pretrain"):
        return sample.text
    raise ValueError(f"unknown task {task!r}")


def collate(samples: list[Sample], vocab: Vocabulary, task: str = "pretrain", frames_cache: dict | None = None) -> Batch:
    frames = []
    for s in samples:
        if frames_cache is not None and s.path in frames_cache:
            frames.append(frames_cache[s.path])
            continue
        f = read_skl(s.path).frames
        if frames_cache is not None:
            frames_cache[s.path] = f
        frames.append(f)
    lengths = np.array([f.shape[0] for f in frames])
    padded = np.zeros((len(frames), int(lengths.max()), *frames[0].shape[1:]))
    for i, f in enumerate(frames):
        padded[i, : f.shape[0]] = f
    targets = [task_target(s, task) for s in samples]
    toks = [tokenize(t, vocab) for t in targets]
    text_ids, text_len = pad_batch([t.ids for t in toks])
    stm_ids, _ = pad_batch([[STM] + t.ids[1:] for t in toks])
    lm_in, lm_len = pad_batch([[BOS] + t.ids[1:-1] for t in toks])
    lm_tgt, _ = pad_batch([t.ids[1:] for t in toks])
    assert (text_ids[:, 0] == CLS).all()
    return Batch(
        sample_ids=[s.sample_id for s in samples],
        frames=padded,
        frame_lengths=lengths,
        text_ids=text_ids,
        text_lengths=text_len,
        stm_ids=stm_ids,
        assignments=[compute_offsets(t.word_ids) for t in toks],
        lm_inputs=lm_in,
        lm_targets=lm_tgt,
        lm_lengths=lm_len,
        targets=targets,
    )
