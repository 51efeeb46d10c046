import dataclasses
import math

import numpy as np
import pytest

from conftest import TINY
from signlink import numerics as nx
from signlink.checkpoint import Checkpoint, CheckpointError
from signlink.model import SignTextModel, collate
from signlink.numerics import Tensor
from signlink.optim import AdamW, adamw_step, cosine_lr
from signlink.tasks import finetune_loss
from signlink.train import ConfigError, TrainConfig, export_embeddings, finetune_loop, pretrain_loop


def test_adamw_first_step_oracle():
    p, g = np.array([1.0, -2.0]), np.array([0.5, -0.1])
    m, v = np.zeros(2), np.zeros(2)
    adamw_step(p, g, m, v, 1, lr=0.1, weight_decay=0.01)
    expected = np.array([1.0, -2.0]) * (1 - 0.1 * 0.01) - 0.1 * np.sign(g) * np.abs(g) / (np.abs(g) + 1e-8)
    np.testing.assert_allclose(p, expected, atol=1e-12)
    np.testing.assert_allclose(m, 0.1 * g)
    np.testing.assert_allclose(v, 0.001 * g * g)


def test_adamw_second_step_oracle():
    p, m, v = np.array([0.3]), np.zeros(1), np.zeros(1)
    g1, g2, lr, b1, b2 = 0.2, -0.4, 0.05, 0.9, 0.999
    adamw_step(p, np.array([g1]), m, v, 1, lr, 0.0)
    adamw_step(p, np.array([g2]), m, v, 2, lr, 0.0)
    mm = (1 - b1) * (b1 * g1 + g2) / (1 - b1**2)
    vv = (1 - b2) * (b2 * g1**2 + g2**2) / (1 - b2**2)
    first = 0.3 - lr * g1 / (abs(g1) + 1e-8)
    assert p[0] == pytest.approx(first - lr * mm / (math.sqrt(vv) + 1e-8), abs=1e-12)


def test_adamw_shape_mismatch():
    with pytest.raises(ValueError):
        adamw_step(np.zeros(2), np.zeros(3), np.zeros(2), np.zeros(2), 1, 0.1)


def test_adamw_skips_parameters_without_gradient():
    a, b = Tensor(np.ones(2), requires_grad=True), Tensor(np.ones(2), requires_grad=True)
    opt = AdamW({"a": a, "b": b}, weight_decay=0.5)
    a.grad = np.ones(2)
    opt.step(0.1)
    assert (b.data == 1.0).all() and opt.t == {"a": 1, "b": 0}


def test_cosine_schedule():
    assert cosine_lr(0, 10, 1.0) == 1.0
    assert cosine_lr(5, 10, 1.0) == pytest.approx(0.5)
    assert cosine_lr(10, 10, 1.0) == pytest.approx(0.0, abs=1e-15)
    vals = [cosine_lr(s, 10, 1.0) for s in range(11)]
    assert all(x >= y for x, y in zip(vals, vals[1:]))
    with pytest.raises(ValueError):
        cosine_lr(11, 10, 1.0)
    with pytest.raises(ValueError):
        cosine_lr(0, 0, 1.0)


def test_config_every_field_renders_and_round_trips():
    cfg = TrainConfig(alpha=0.3, betas=(0.8, 0.99), base_lr=2e-3, freeze_text_encoder=True)
    text = cfg.render()
    assert {line.split("=")[0] for line in text.splitlines()} == {f.name for f in dataclasses.fields(TrainConfig)}
    assert TrainConfig.parse(text) == cfg
    assert TrainConfig.parse(text).fingerprint() == cfg.fingerprint()


def test_config_auto_values():
    cfg = TrainConfig.parse("batch_size=auto\nbase_lr=auto\n")
    assert cfg.batch_size is None and (cfg.batch, cfg.lr) == (16, 3e-4)
    ft = cfg.replace(stage="finetune")
    assert (ft.batch, ft.lr) == (8, 1e-4)
    assert "batch_size=auto" in cfg.render()


@pytest.mark.parametrize(
    "text",
    ["bogus=1", "alpha=2", "epochs=zero", "row_op=median", "no_equals_sign", "fusion_layers=9", "checked=maybe", "transfer_mode=some"],
)
def test_config_errors(text):
    with pytest.raises(ConfigError):
        TrainConfig.parse(text)


def test_config_comments_and_relative_manifest(tmp_path):
    (tmp_path / "c.cfg").write_text("# comment\n\nmanifest=data/m.tsv\n")
    assert TrainConfig.load(tmp_path / "c.cfg").manifest == str((tmp_path / "data/m.tsv").resolve())


def test_checkpoint_byte_idempotence(tmp_path, rng):
    ck = Checkpoint({"w": rng.normal(size=(3, 2)), "b": rng.normal(size=2)}, {"m.w": np.zeros((3, 2))}, 7, "abc", {"k": 1})
    ck.save(tmp_path / "a.ckpt")
    Checkpoint.load(tmp_path / "a.ckpt").save(tmp_path / "b.ckpt")
    assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()
    back = Checkpoint.load(tmp_path / "a.ckpt")
    assert back.step == 7 and back.config == {"k": 1}
    np.testing.assert_array_equal(back.params["w"], ck.params["w"])


def test_checkpoint_fingerprint_and_corruption(tmp_path):
    Checkpoint({"w": np.ones(2)}, fingerprint="aaaa").save(tmp_path / "a.ckpt")
    with pytest.raises(CheckpointError, match="fingerprint"):
        Checkpoint.load(tmp_path / "a.ckpt", expect_fingerprint="bbbb")
    assert Checkpoint.load(tmp_path / "a.ckpt", expect_fingerprint="bbbb", force=True).fingerprint == "aaaa"
    raw = (tmp_path / "a.ckpt").read_bytes()
    (tmp_path / "b.ckpt").write_bytes(b"NOPE" + raw[4:])
    with pytest.raises(CheckpointError, match="magic"):
        Checkpoint.load(tmp_path / "b.ckpt")
    (tmp_path / "c.ckpt").write_bytes(raw[:-3])
    with pytest.raises(CheckpointError, match="truncated"):
        Checkpoint.load(tmp_path / "c.ckpt")


def test_zero_lr_leaves_parameters_unchanged(tiny_cfg, tiny_vocab):
    res = pretrain_loop(tiny_cfg.replace(base_lr=0.0))
    fresh = SignTextModel(tiny_cfg.model_config(), len(res.vocab), tiny_cfg.seed)
    saved = Checkpoint.load(res.checkpoint).params
    for name, p in fresh.named_parameters().items():
        np.testing.assert_array_equal(saved[name], p.data)


def test_pretrain_trace_rows(tiny_cfg):
    res = pretrain_loop(tiny_cfg)
    assert [r["step"] for r in res.trace] == [0, 1, 2]
    trace = (res.checkpoint.parent / "pretrain_trace.tsv").read_text().splitlines()
    assert trace[0].split("\t") == ["step", "hal_global", "hal_local", "stm", "lm", "total", "lr"]
    assert len(trace) == 4 and all(len(line.split("\t")) == 7 for line in trace)
    assert all(math.isfinite(float(x)) for line in trace[1:] for x in line.split("\t"))


def test_pretrain_determinism(tiny_cfg):
    # out_dir is part of the recorded config, so both runs share it
    a = pretrain_loop(tiny_cfg)
    first = (a.checkpoint.read_bytes(), (a.checkpoint.parent / "pretrain_trace.tsv").read_bytes())
    b = pretrain_loop(tiny_cfg)
    assert b.checkpoint.read_bytes() == first[0]
    assert (b.checkpoint.parent / "pretrain_trace.tsv").read_bytes() == first[1]


def test_seed_changes_run(tiny_cfg, tmp_path):
    a = pretrain_loop(tiny_cfg.replace(out_dir=str(tmp_path / "a")))
    b = pretrain_loop(tiny_cfg.replace(out_dir=str(tmp_path / "b"), seed=1))
    assert a.checkpoint.read_bytes() != b.checkpoint.read_bytes()


def test_frozen_text_encoder(tiny_cfg):
    res = pretrain_loop(tiny_cfg.replace(freeze_text_encoder=True))
    fresh = SignTextModel(tiny_cfg.model_config(), len(res.vocab), tiny_cfg.seed).named_parameters()
    now = res.model.named_parameters()
    assert all((now[k].data == fresh[k].data).all() for k in now if k.startswith("text_enc."))
    assert not (now["sign_proj.w"].data == fresh["sign_proj.w"].data).all()


def test_gradient_accumulation_equivalence(tiny_corpus, tiny_vocab):
    model = SignTextModel(TINY, len(tiny_vocab), seed=0)
    samples = tiny_corpus.split("train")[:8]
    assert len(samples) == 8
    params = model.named_parameters()

    def grads(group):
        model.zero_grad()
        batch = collate(group, tiny_vocab, "slt")
        nx.backward(finetune_loss(model.decoder_logits(batch), batch.lm_targets))
        return {k: p.grad.copy() for k, p in params.items() if p.grad is not None}

    full = grads(samples)
    parts = [grads(samples[:4]), grads(samples[4:])]
    for k, g in full.items():
        acc = sum(p.get(k, 0.0) for p in parts) / 2
        np.testing.assert_allclose(g, acc, rtol=0, atol=1e-9, err_msg=k)


def test_finetune_requires_checkpoint_unless_none(tiny_cfg):
    with pytest.raises(FileNotFoundError):
        finetune_loop(tiny_cfg.replace(stage="finetune", transfer_mode="sign_only"))
    with pytest.raises(FileNotFoundError):
        finetune_loop(tiny_cfg.replace(stage="finetune"), "/nonexistent.ckpt")


def test_finetune_outputs(tiny_cfg):
    pre = pretrain_loop(tiny_cfg)
    res = finetune_loop(tiny_cfg.replace(stage="finetune", task="islr", eval_every_epoch=True, epochs=1, max_steps=0), pre.checkpoint)
    out = res.checkpoint.parent
    assert res.checkpoint.name == "finetune_islr.ckpt"
    assert set(res.reports) == {"train", "dev", "test"}
    assert len(res.dev_history) == 1
    assert (out / "report_islr_dev.txt").read_text().startswith("task=islr\ncount=")
    assert Checkpoint.load(res.checkpoint).config["stage"] == "finetune"
    assert len(res.transfer.copied) > 0


def test_export_rows(tiny_cfg, tiny_corpus, tmp_path):
    pre = pretrain_loop(tiny_cfg)
    n = export_embeddings(pre.checkpoint, "dev", tmp_path / "emb.tsv")
    lines = (tmp_path / "emb.tsv").read_text().splitlines()
    assert n == len(lines) == 2 * len(tiny_corpus.split("dev"))
    for line in lines:
        fields = line.split("\t")
        assert fields[1] in ("sign", "text") and len(fields) == 2 + TINY.d_model


def test_fusion_sweep_deepens_stack(tiny_cfg):
    from signlink.train import ablate

    rows = ablate(tiny_cfg.replace(max_steps=1), "fusion")
    assert [r["value"] for r in rows] == [1, 2, 3, 4, 5]
    assert Checkpoint.load(tiny_cfg.out_dir + "/fusion_5/pretrain.ckpt").config["depth"] == 5
