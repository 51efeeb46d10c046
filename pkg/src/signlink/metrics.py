"""Recognition and translation metrics, all reported in percent."""

from __future__ import annotations

import collections
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence


def metric_tokens(text: str, cjk: bool = False) -> list[str]:
    """Whitespace tokens, or one token per non-space character for CJK text."""
    if cjk:
        return [c for c in text if not c.isspace()]
    return text.split()


def _tok(x, cjk: bool = False) -> list[str]:
    return metric_tokens(x, cjk) if isinstance(x, str) else list(x)


def edit_distance(a: Sequence[str], b: Sequence[str]) -> int:
    prev = list(range(len(b) + 1))
    for i, x in enumerate(a, 1):
        cur = [i] + [0] * len(b)
        for j, y in enumerate(b, 1):
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (x != y))
        prev = cur
    return prev[-1]


def wer(ref, hyp) -> float:
    r, h = _tok(ref), _tok(hyp)
    if not r:
        raise ValueError("reference must be nonempty")
    return 100.0 * edit_distance(r, h) / len(r)


def corpus_wer(refs, hyps) -> float:
    """Total edits over total reference length."""
    if len(refs) != len(hyps):
        raise ValueError("refs and hyps differ in length")
    edits = sum(edit_distance(_tok(r), _tok(h)) for r, h in zip(refs, hyps))
    total = sum(len(_tok(r)) for r in refs)
    if total == 0:
        raise ValueError("references must be nonempty")
    return 100.0 * edits / total


def _ngrams(tokens: list[str], n: int) -> collections.Counter:
    return collections.Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def bleu(refs, hyps, n: int = 4, cjk: bool = False) -> float:
    """Corpus BLEU up to order ``n`` (uniform weights, single reference).

    An order with zero matches uses (0 + 1) / (total + 1) instead of 0.
    """
    if not 1 <= n <= 4:
        raise ValueError("BLEU order must be in 1..4")
    if not refs or len(refs) != len(hyps):
        raise ValueError("need equally many refs and hyps, at least one")
    matches, totals = [0] * n, [0] * n
    ref_len = hyp_len = 0
    for ref, hyp in zip(refs, hyps):
        r, h = _tok(ref, cjk), _tok(hyp, cjk)
        ref_len += len(r)
        hyp_len += len(h)
        for k in range(1, n + 1):
            hc, rc = _ngrams(h, k), _ngrams(r, k)
            matches[k - 1] += sum(min(c, rc[g]) for g, c in hc.items())
            totals[k - 1] += max(len(h) - k + 1, 0)
    if hyp_len == 0:
        return 0.0
    log_p = 0.0
    for m, t in zip(matches, totals):
        p = m / t if m > 0 else 1.0 / (t + 1)
        log_p += math.log(p) / n
    bp = 1.0 if hyp_len > ref_len else math.exp(1.0 - ref_len / hyp_len)
    return 100.0 * bp * math.exp(log_p)


def lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b, 1):
            cur.append(prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1]))
        prev = cur
    return prev[-1]


def rouge_l(ref, hyp, cjk: bool = False) -> float:
    r, h = _tok(ref, cjk), _tok(hyp, cjk)
    if not r:
        raise ValueError("reference must be nonempty")
    if not h:
        return 0.0
    lcs = lcs_length(r, h)
    if lcs == 0:
        return 0.0
    p, rec = lcs / len(h), lcs / len(r)
    return 100.0 * 2 * p * rec / (p + rec)


def corpus_rouge_l(refs, hyps, cjk: bool = False) -> float:
    if not refs or len(refs) != len(hyps):
        raise ValueError("need equally many refs and hyps, at least one")
    return sum(rouge_l(r, h, cjk) for r, h in zip(refs, hyps)) / len(refs)


def top1_accuracy(preds, labels, per_class: bool = False) -> float:
    """Per-instance accuracy, or the unweighted mean of per-class accuracy
    over classes present in ``labels``."""
    if len(preds) != len(labels):
        raise ValueError("preds and labels differ in length")
    if not labels:
        raise ValueError("no labels")
    if not per_class:
        return 100.0 * sum(p == y for p, y in zip(preds, labels)) / len(labels)
    hit: dict = collections.defaultdict(int)
    seen: dict = collections.defaultdict(int)
    for p, y in zip(preds, labels):
        seen[y] += 1
        hit[y] += p == y
    return 100.0 * sum(hit[c] / seen[c] for c in seen) / len(seen)


TASK_KEYS = {
    "islr": ("P-I", "P-C"),
    "cslr": ("WER",),
    "slt": ("B@1", "B@2", "B@3", "B@4", "R@L"),
}


@dataclass
class EvalReport:
    task: str
    values: dict[str, float] = field(default_factory=dict)
    count: int = 0

    def __post_init__(self):
        for k, v in self.values.items():
            if not math.isfinite(v):
                raise ValueError(f"metric {k} is not finite")

    def render(self) -> str:
        lines = [f"task={self.task}", f"count={self.count}"]
        lines += [f"{k}={v:.2f}" for k, v in self.values.items()]
        return "\n".join(lines) + "\n"

    def line(self) -> str:
        """Single-line form for console output."""
        return " ".join([f"task={self.task}", f"count={self.count}"] + [f"{k}={v:.2f}" for k, v in self.values.items()])

    def to_json(self) -> str:
        return json.dumps({"task": self.task, "count": self.count, "metrics": self.values}, sort_keys=True)

    def save(self, stem: str | Path) -> None:
        stem = Path(stem)
        stem.with_suffix(".txt").write_text(self.render(), encoding="utf-8")
        stem.with_suffix(".json").write_text(self.to_json() + "\n", encoding="utf-8")


def evaluate(task: str, refs: list[str], hyps: list[str], cjk: bool = False) -> EvalReport:
    task = task.lower()
    if task == "islr":
        vals = {"P-I": top1_accuracy(hyps, refs), "P-C": top1_accuracy(hyps, refs, per_class=True)}
    elif task == "cslr":
        vals = {"WER": corpus_wer(refs, hyps)}
    elif task == "slt":
        vals = {f"B@{n}": bleu(refs, hyps, n, cjk) for n in range(1, 5)}
        vals["R@L"] = corpus_rouge_l(refs, hyps, cjk)
    else:
        raise ValueError(f"unknown task {task!r}")
    return EvalReport(task, vals, len(refs))
