"""Configuration, pre-training and fine-tuning loops, evaluation, export."""

from __future__ import annotations

import dataclasses
import hashlib
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import numerics as nx
from .checkpoint import Checkpoint
from .data import CorpusManifest, Sample, load_manifest
from .hal import HALConfig, ROW_OPS, SCORINGS, global_similarity
from .metrics import EvalReport, evaluate
from .model import Batch, ModelConfig, SignTextModel, collate
from .optim import AdamW, cosine_lr
from .tasks import TASKS, TRANSFER_MODES, TransferFilter, TransferManifest, decode_strings, finetune_loss, transfer_parameters
from .text import Vocabulary, build_vocab

log = logging.getLogger(__name__)

ARCH_KEYS = tuple(f.name for f in dataclasses.fields(ModelConfig))


class ConfigError(ValueError):
    pass


@dataclass
class TrainConfig:
    stage: str = "pretrain"
    task: str = "slt"
    epochs: int = 10
    max_steps: int = 0  # 0: run the full epoch budget
    batch_size: int | None = None  # None ("auto"): 16 for pretrain, 8 for finetune
    base_lr: float | None = None  # None ("auto"): 3e-4 for pretrain, 1e-4 for finetune
    weight_decay: float = 1e-3
    betas: tuple = (0.9, 0.999)
    seed: int = 0
    alpha: float = 0.5
    beta: float = 0.5
    fusion_layers: int = 2
    row_op: str = "max"
    scoring: str = "softmax"
    project_local: bool = True
    freeze_text_encoder: bool = False
    sgt_cond_source: str = "sign"
    transfer_mode: str = "sign_and_sgt"
    manifest: str = ""
    out_dir: str = "runs/default"
    vocab_max_size: int = 10_000
    decode_max_len: int = 24
    eval_every_epoch: bool = True
    checked: bool = False
    # architecture
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
    center: bool = True
    motion: bool = True

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.stage not in ("pretrain", "finetune"):
            raise ConfigError(f"stage must be pretrain or finetune, got {self.stage!r}")
        if self.task not in TASKS:
            raise ConfigError(f"task must be one of {TASKS}, got {self.task!r}")
        if self.row_op not in ROW_OPS or self.scoring not in SCORINGS:
            raise ConfigError(f"bad row_op/scoring {self.row_op!r}/{self.scoring!r}")
        if self.sgt_cond_source not in ("sign", "text"):
            raise ConfigError(f"sgt_cond_source must be sign or text, got {self.sgt_cond_source!r}")
        if self.transfer_mode not in TRANSFER_MODES:
            raise ConfigError(f"transfer_mode must be one of {TRANSFER_MODES}")
        if self.batch_size is not None and self.batch_size <= 0:
            raise ConfigError("batch_size must be positive")
        for name in ("epochs", "d_part", "d_model", "heads", "d_proj", "stm_blocks", "lm_blocks", "max_len"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if (self.base_lr or 0.0) < 0 or self.weight_decay < 0 or self.max_steps < 0:
            raise ConfigError("base_lr, weight_decay and max_steps must be nonnegative")
        if not (0 <= self.alpha <= 1 and 0 <= self.beta <= 1):
            raise ConfigError("alpha and beta must lie in [0, 1]")
        if not 0 <= self.fusion_layers <= self.depth:
            raise ConfigError(f"fusion_layers must lie in [0, depth={self.depth}]")
        if len(self.betas) != 2:
            raise ConfigError("betas needs two values")

    @property
    def lr(self) -> float:
        if self.base_lr is not None:
            return self.base_lr
        return 3e-4 if self.stage == "pretrain" else 1e-4

    @property
    def batch(self) -> int:
        if self.batch_size is not None:
            return self.batch_size
        return 16 if self.stage == "pretrain" else 8

    # -- key=value text format -------------------------------------------
    def render(self) -> str:
        lines = []
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if v is None:
                v = "auto"
            elif isinstance(v, bool):
                v = "true" if v else "false"
            elif isinstance(v, tuple):
                v = ",".join(repr(x) for x in v)
            elif isinstance(v, float):
                v = repr(v)
            lines.append(f"{f.name}={v}")
        return "\n".join(lines) + "\n"

    def fingerprint(self) -> str:
        return hashlib.sha256(self.render().encode("utf-8")).hexdigest()

    def model_config(self) -> ModelConfig:
        return ModelConfig(**{k: getattr(self, k) for k in ARCH_KEYS})

    def hal_config(self) -> HALConfig:
        return HALConfig(self.alpha, self.row_op, self.scoring, self.project_local)

    def replace(self, **kw) -> "TrainConfig":
        return dataclasses.replace(self, **kw)

    @classmethod
    def from_pairs(cls, pairs: dict[str, str]) -> "TrainConfig":
        fields = {f.name: f for f in dataclasses.fields(cls)}
        kw = {}
        for key, raw in pairs.items():
            if key not in fields:
                raise ConfigError(f"unknown config key {key!r}")
            kw[key] = _coerce(key, raw, _FIELD_TYPES[key])
        return cls(**kw)

    @classmethod
    def parse(cls, text: str) -> "TrainConfig":
        pairs = {}
        for n, line in enumerate(text.splitlines(), 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, sep, val = line.partition("=")
            if not sep:
                raise ConfigError(f"line {n}: expected key=value")
            pairs[key.strip()] = val.strip()
        return cls.from_pairs(pairs)

    @classmethod
    def load(cls, path: str | Path) -> "TrainConfig":
        path = Path(path)
        cfg = cls.parse(path.read_text(encoding="utf-8"))
        if cfg.manifest and not Path(cfg.manifest).is_absolute():
            cfg.manifest = str((path.parent / cfg.manifest).resolve())
        return cfg


_FIELD_TYPES = {"batch_size": int, "base_lr": float}
_FIELD_TYPES.update({f.name: type(f.default) for f in dataclasses.fields(TrainConfig) if f.name not in _FIELD_TYPES})
_AUTO = frozenset(("batch_size", "base_lr"))


def _coerce(key: str, raw: str, typ: type):
    if key in _AUTO and raw.lower() == "auto":
        return None
    try:
        if typ is bool:
            if raw.lower() not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return raw.lower() in ("true", "1", "yes")
        if typ is tuple:
            return tuple(float(x) for x in raw.split(","))
        return typ(raw)
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None


# ---------------------------------------------------------------------------
# Shared helpers
# ---------------------------------------------------------------------------


def corpus_vocab(manifest: CorpusManifest, max_size: int) -> Vocabulary:
    corpus = [s.text for s in manifest.samples] + [" ".join(s.glosses) for s in manifest.samples]
    corpus += [f"{g} {w}" for g, w in manifest.inventory()]
    return build_vocab(corpus, max_size)


def batches(samples: list, batch_size: int, rng: np.random.Generator, min_size: int = 1) -> list[list]:
    order = rng.permutation(len(samples))
    out = [[samples[i] for i in order[k : k + batch_size]] for k in range(0, len(samples), batch_size)]
    return [b for b in out if len(b) >= min_size]


def write_trace(path: Path, rows: list[dict]) -> None:
    if not rows:
        path.write_text("", encoding="utf-8")
        return
    cols = list(rows[0])
    lines = ["\t".join(cols)]
    for r in rows:
        lines.append("\t".join(str(r[c]) if isinstance(r[c], int) else f"{r[c]:.17g}" for c in cols))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def model_checkpoint(model: SignTextModel, opt: AdamW | None, step: int, cfg: TrainConfig) -> Checkpoint:
    params = {k: p.data.copy() for k, p in model.named_parameters().items()}
    moments = {}
    if opt is not None:
        for k in opt.params:
            moments[f"m.{k}"] = opt.m[k]
            moments[f"v.{k}"] = opt.v[k]
            moments[f"t.{k}"] = np.array(float(opt.t[k]))
    config = {f.name: getattr(cfg, f.name) for f in dataclasses.fields(cfg)}
    config["betas"] = list(cfg.betas)
    return Checkpoint(params, moments, step, cfg.fingerprint(), config)


def load_model(ckpt_path: str | Path) -> tuple[SignTextModel, Vocabulary, TrainConfig, Checkpoint]:
    ckpt = Checkpoint.load(ckpt_path)
    cfg = TrainConfig(**{**ckpt.config, "betas": tuple(ckpt.config["betas"])})
    vocab = Vocabulary.load(Path(ckpt_path).with_suffix(".vocab"))
    model = SignTextModel(cfg.model_config(), len(vocab), cfg.seed)
    transfer_parameters(ckpt.params, model, TransferFilter("full"))
    return model, vocab, cfg, ckpt


def retrieval_top1(model: SignTextModel, batch: Batch) -> float:
    """Fraction of signs whose most similar text (global similarity) is their own."""
    with nx.no_grad():
        enc = model.co_encode(batch)
        sim = global_similarity(enc.s_cls, enc.t_cls, model.heads).data
    return float((sim.argmax(axis=1) == np.arange(batch.size)).mean())


# ---------------------------------------------------------------------------
# Pre-training
# ---------------------------------------------------------------------------


@dataclass
class PretrainResult:
    checkpoint: Path
    trace: list[dict]
    model: SignTextModel = field(repr=False)
    vocab: Vocabulary = field(repr=False)
    manifest: CorpusManifest = field(repr=False)


def pretrain_loop(cfg: TrainConfig) -> PretrainResult:
    if not cfg.manifest:
        raise ConfigError("config needs a manifest path")
    manifest = load_manifest(cfg.manifest)
    train = manifest.split("train")
    if len(train) < 2:
        raise ValueError("training split needs at least 2 samples for contrastive pre-training")
    vocab = corpus_vocab(manifest, cfg.vocab_max_size)
    model = SignTextModel(cfg.model_config(), len(vocab), cfg.seed)
    params = model.named_parameters()
    if cfg.freeze_text_encoder:
        params = {k: v for k, v in params.items() if not k.startswith("text_enc.")}
    opt = AdamW(params, cfg.weight_decay, cfg.betas)
    hal_cfg = cfg.hal_config()

    per_epoch = len(batches(train, cfg.batch, np.random.default_rng(0), 2))
    total = cfg.max_steps or cfg.epochs * per_epoch
    shuffle = np.random.default_rng([cfg.seed, 7])
    cache: dict = {}
    trace: list[dict] = []
    step = 0
    prev_checked = nx.set_checked(cfg.checked)
    try:
        while step < total:
            for group in batches(train, cfg.batch, shuffle, 2):
                if step >= total:
                    break
                batch = collate(group, vocab, "pretrain", cache)
                lr = cosine_lr(step, total, cfg.lr)
                model.zero_grad()
                terms = model.pretrain_terms(batch, hal_cfg, cfg.beta, [cfg.seed, 11, step], cfg.sgt_cond_source)
                nx.backward(terms["total"])
                opt.step(lr)
                model.temperature.clip_()
                row = {"step": step, "hal_global": terms["hal_global"].item(), "hal_local": terms["hal_local"].item()}
                row.update({"stm": terms["stm"].item(), "lm": terms["lm"].item(), "total": terms["total"].item(), "lr": lr})
                trace.append(row)
                if step % 20 == 0:
                    log.info("pretrain step %d total %.4f", step, row["total"])
                step += 1
    finally:
        nx.set_checked(prev_checked)

    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ckpt_path = out / "pretrain.ckpt"
    model_checkpoint(model, opt, step, cfg).save(ckpt_path)
    vocab.save(ckpt_path.with_suffix(".vocab"))
    write_trace(out / "pretrain_trace.tsv", trace)
    return PretrainResult(ckpt_path, trace, model, vocab, manifest)


# ---------------------------------------------------------------------------
# Fine-tuning and evaluation
# ---------------------------------------------------------------------------


def task_samples(samples: list[Sample], task: str) -> list[Sample]:
    if task == "islr":
        return [s for s in samples if len(s.glosses) == 1]
    return list(samples)


def evaluate_split(model: SignTextModel, vocab: Vocabulary, samples: list[Sample], task: str, max_len: int, batch_size: int = 32, cache=None) -> EvalReport:
    refs, hyps = [], []
    for k in range(0, len(samples), batch_size):
        batch = collate(samples[k : k + batch_size], vocab, task, cache)
        hyps += decode_strings(model, batch, vocab, max_len)
        refs += batch.targets
    return evaluate(task, refs, hyps)


@dataclass
class FinetuneResult:
    checkpoint: Path
    reports: dict[str, EvalReport]
    transfer: TransferManifest
    dev_history: list[EvalReport]
    trace: list[dict]
    model: SignTextModel = field(repr=False)
    vocab: Vocabulary = field(repr=False)


def finetune_loop(cfg: TrainConfig, from_ckpt: str | Path | None = None) -> FinetuneResult:
    if not cfg.manifest:
        raise ConfigError("config needs a manifest path")
    manifest = load_manifest(cfg.manifest)
    pre = None
    if from_ckpt is not None:
        if not Path(from_ckpt).exists():
            raise FileNotFoundError(f"checkpoint not found: {from_ckpt}")
        pre = Checkpoint.load(from_ckpt)
        vocab = Vocabulary.load(Path(from_ckpt).with_suffix(".vocab"))
        cfg = cfg.replace(**{k: pre.config[k] for k in ARCH_KEYS if k in pre.config})
    elif cfg.transfer_mode != "none":
        raise FileNotFoundError(f"transfer_mode={cfg.transfer_mode} needs a pre-trained checkpoint")
    else:
        vocab = corpus_vocab(manifest, cfg.vocab_max_size)

    task = cfg.task
    train = task_samples(manifest.split("train"), task)
    if not train:
        raise ValueError(f"no training samples for task {task}")
    model = SignTextModel(cfg.model_config(), len(vocab), cfg.seed + 1)
    tm = transfer_parameters(pre.params if pre else {}, model, TransferFilter(cfg.transfer_mode))
    opt = AdamW(model.named_parameters(), cfg.weight_decay, cfg.betas)

    per_epoch = len(batches(train, cfg.batch, np.random.default_rng(0)))
    total = cfg.max_steps or cfg.epochs * per_epoch
    shuffle = np.random.default_rng([cfg.seed, 13])
    cache: dict = {}
    dev = task_samples(manifest.split("dev"), task)
    history, trace = [], []
    step = 0
    prev_checked = nx.set_checked(cfg.checked)
    try:
        while step < total:
            for group in batches(train, cfg.batch, shuffle):
                if step >= total:
                    break
                batch = collate(group, vocab, task, cache)
                lr = cosine_lr(step, total, cfg.lr)
                model.zero_grad()
                loss = finetune_loss(model.decoder_logits(batch), batch.lm_targets)
                nx.backward(loss)
                opt.step(lr)
                trace.append({"step": step, "loss": loss.item(), "lr": lr})
                step += 1
            if cfg.eval_every_epoch and dev:
                history.append(evaluate_split(model, vocab, dev, task, cfg.decode_max_len, cache=cache))
    finally:
        nx.set_checked(prev_checked)

    reports = {}
    for split in ("train", "dev", "test"):
        samples = task_samples(manifest.split(split), task)
        if samples:
            reports[split] = evaluate_split(model, vocab, samples, task, cfg.decode_max_len, cache=cache)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ckpt_path = out / f"finetune_{task}.ckpt"
    ft_cfg = cfg.replace(stage="finetune")
    model_checkpoint(model, opt, step, ft_cfg).save(ckpt_path)
    vocab.save(ckpt_path.with_suffix(".vocab"))
    write_trace(out / f"finetune_{task}_trace.tsv", trace)
    for split, rep in reports.items():
        rep.save(out / f"report_{task}_{split}")
    return FinetuneResult(ckpt_path, reports, tm, history, trace, model, vocab)


def eval_checkpoint(ckpt_path: str | Path, task: str, split: str, manifest_path: str | None = None) -> EvalReport:
    model, vocab, cfg, _ = load_model(ckpt_path)
    manifest = load_manifest(manifest_path or cfg.manifest)
    samples = task_samples(manifest.split(split), task)
    if not samples:
        raise ValueError(f"split {split} has no samples for task {task}")
    return evaluate_split(model, vocab, samples, task, cfg.decode_max_len)


def export_embeddings(ckpt_path: str | Path, split: str, out_path: str | Path, manifest_path: str | None = None) -> int:
    """Write ``id<TAB>modality<TAB>floats...`` rows, one sign and one text row
    per sample. Sign rows mean-pool the sign encoder output; text rows
    mean-pool the token+position embeddings."""
    model, vocab, cfg, _ = load_model(ckpt_path)
    manifest = load_manifest(manifest_path or cfg.manifest)
    samples = manifest.split(split)
    lines = []
    with nx.no_grad():
        for k in range(0, len(samples), 32):
            batch = collate(samples[k : k + 32], vocab, "pretrain")
            tokens, lengths = model.encode_sign(batch)
            emb = model.embed(batch.text_ids).data
            for i, sid in enumerate(batch.sample_ids):
                s = tokens.data[i, : lengths[i]].mean(axis=0)
                t = emb[i, : batch.text_lengths[i]].mean(axis=0)
                lines.append(f"{sid}\tsign\t" + "\t".join(f"{x:.17g}" for x in s))
                lines.append(f"{sid}\ttext\t" + "\t".join(f"{x:.17g}" for x in t))
    Path(out_path).write_text("\n".join(lines) + "\n", encoding="utf-8")
    return len(lines)


# ---------------------------------------------------------------------------
# Ablation sweeps
# ---------------------------------------------------------------------------

SWEEPS = {
    "alpha": ("alpha", (0.2, 0.4, 0.5, 0.6, 0.8)),
    "beta": ("beta", (0.2, 0.4, 0.5, 0.6, 0.8)),
    "fusion": ("fusion_layers", (1, 2, 3, 4, 5)),
    "rowop": ("row_op", ROW_OPS),
    "scoring": ("scoring", SCORINGS),
}


def ablate(cfg: TrainConfig, sweep: str) -> list[dict]:
    """One pre-training run per grid value; returns one result row each."""
    if sweep not in SWEEPS:
        raise ConfigError(f"unknown sweep {sweep!r}; choose from {tuple(SWEEPS)}")
    key, grid = SWEEPS[sweep]
    rows = []
    for value in grid:
        kw = {key: value, "out_dir": str(Path(cfg.out_dir) / f"{sweep}_{value}")}
        if key == "fusion_layers":
            kw["depth"] = max(cfg.depth, value)  # deeper stack when F exceeds it
        run_cfg = cfg.replace(**kw)
        res = pretrain_loop(run_cfg)
        train = res.manifest.split("train")[: cfg.batch]
        batch = collate(train, res.vocab, "pretrain")
        last = res.trace[-1]
        rows.append(
            {
                "sweep": sweep,
                "value": value,
                "steps": len(res.trace),
                "hal": (1 - run_cfg.alpha) * last["hal_global"] + run_cfg.alpha * last["hal_local"],
                "sgt": (1 - run_cfg.beta) * last["stm"] + run_cfg.beta * last["lm"],
                "total": last["total"],
                "retrieval_top1": retrieval_top1(res.model, batch),
            }
        )
    return rows


def format_rows(rows: list[dict]) -> str:
    if not rows:
        return ""
    cols = list(rows[0])
    out = ["\t".join(cols)]
    for r in rows:
        out.append("\t".join(f"{r[c]:.6f}" if isinstance(r[c], float) else str(r[c]) for c in cols))
    return "\n".join(out) + "\n"
