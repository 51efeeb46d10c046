"""Command-line entry point.

Failures print exactly one line, ``error<TAB><kind><TAB><message>``, to
stderr and exit with status 1 (2 for usage errors).
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .data import generate_corpus
from .train import SWEEPS, TrainConfig, ablate, eval_checkpoint, export_embeddings, finetune_loop, format_rows, pretrain_loop


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _config(path: str, **overrides) -> TrainConfig:
    if not Path(path).exists():
        raise FileNotFoundError(f"config not found: {path}")
    cfg = TrainConfig.load(path)
    return cfg.replace(**{k: v for k, v in overrides.items() if v is not None})


def cmd_pretrain(a) -> None:
    cfg = _config(a.config, stage="pretrain", out_dir=a.out)
    res = pretrain_loop(cfg)
    last = res.trace[-1]
    print(f"checkpoint\t{res.checkpoint}\tsteps\t{len(res.trace)}\ttotal\t{last['total']:.6f}")


def cmd_finetune(a) -> None:
    cfg = _config(a.config, stage="finetune", task=a.task, out_dir=a.out, transfer_mode=a.transfer_mode)
    res = finetune_loop(cfg, a.from_ckpt)
    print(f"checkpoint\t{res.checkpoint}")
    for split, rep in res.reports.items():
        print(f"{split}\t{rep.line()}")


def cmd_eval(a) -> None:
    rep = eval_checkpoint(a.ckpt, a.task, a.split, a.manifest)
    print(rep.to_json() if a.json else rep.render())


def cmd_gen_data(a) -> None:
    man = generate_corpus(
        a.out,
        seed=a.seed,
        num_glosses=a.glosses,
        num_sentences=a.sentences,
        noise_std=a.noise,
        isolated_per_gloss=a.isolated,
    )
    counts = {s: len(man.split(s)) for s in ("train", "dev", "test")}
    print(f"manifest\t{Path(a.out) / 'manifest.tsv'}\t" + "\t".join(f"{k}\t{v}" for k, v in counts.items()))


def cmd_gradcheck(a) -> None:
    from .gradsuite import CASES, run_suite

    if a.module and a.module not in CASES:
        raise UsageError(f"unknown module {a.module!r}; choose from {sorted(CASES)}")
    results = run_suite([a.module] if a.module else None, instances=a.instances, seed=a.seed)
    worst = 0.0
    for name, errs in results.items():
        worst = max(worst, max(errs))
        print(f"{name}\tinstances\t{len(errs)}\tmax_rel_err\t{max(errs):.3e}")
    if worst > a.tol:
        raise ArithmeticError(f"max relative error {worst:.3e} exceeds {a.tol:g}")


def cmd_ablate(a) -> None:
    cfg = _config(a.config, stage="pretrain", out_dir=a.out)
    rows = ablate(cfg, a.sweep)
    sys.stdout.write(format_rows(rows))


def cmd_export(a) -> None:
    n = export_embeddings(a.ckpt, a.split, a.out, a.manifest)
    print(f"rows\t{n}\tpath\t{a.out}")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="signlink")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("pretrain")
    s.add_argument("--config", required=True)
    s.add_argument("--out", default=None)
    s.set_defaults(fn=cmd_pretrain)

    s = sub.add_parser("finetune")
    s.add_argument("--task", required=True, choices=("islr", "cslr", "slt"))
    s.add_argument("--config", required=True)
    s.add_argument("--from", dest="from_ckpt", default=None)
    s.add_argument("--transfer-mode", default=None, choices=("none", "sign_only", "sign_and_sgt", "full"))
    s.add_argument("--out", default=None)
    s.set_defaults(fn=cmd_finetune)

    s = sub.add_parser("eval")
    s.add_argument("--task", required=True, choices=("islr", "cslr", "slt"))
    s.add_argument("--ckpt", required=True)
    s.add_argument("--split", required=True, choices=("train", "dev", "test"))
    s.add_argument("--manifest", default=None)
    s.add_argument("--json", action="store_true")
    s.set_defaults(fn=cmd_eval)

    s = sub.add_parser("gen-data")
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--glosses", type=int, default=10)
    s.add_argument("--sentences", type=int, default=20)
    s.add_argument("--noise", type=float, default=0.05)
    s.add_argument("--isolated", type=int, default=0)
    s.set_defaults(fn=cmd_gen_data)

    s = sub.add_parser("gradcheck")
    s.add_argument("--module", default=None)
    s.add_argument("--instances", type=int, default=5)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--tol", type=float, default=1e-4)
    s.set_defaults(fn=cmd_gradcheck)

    s = sub.add_parser("ablate")
    s.add_argument("--sweep", required=True, choices=tuple(SWEEPS))
    s.add_argument("--config", required=True)
    s.add_argument("--out", default=None)
    s.set_defaults(fn=cmd_ablate)

    s = sub.add_parser("export-embeddings")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--split", required=True, choices=("train", "dev", "test"))
    s.add_argument("--out", required=True)
    s.add_argument("--manifest", default=None)
    s.set_defaults(fn=cmd_export)
    return p


def _fail(kind: str, msg: str, code: int) -> int:
    line = " ".join(str(msg).split())
    print(f"error\t{kind}\t{line}", file=sys.stderr)
    return code


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as e:
        return _fail("UsageError", e, 2)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        args.fn(args)
    except UsageError as e:
        return _fail("UsageError", e, 2)
    except Exception as e:  # noqa: BLE001 - every failure becomes one diagnostic line
        return _fail(type(e).__name__, e, 1)
    return 0


if __name__ == "__main__":
    sys.exit(main())
