"""Tabular autoregressive label models over V+ = labels + [EOS].

Contexts are tuples of label indices. A model of order k keys on the last k
labels, left-padded with ``BOS``; order ``FULL`` keys on the whole prefix.
Unseen contexts fall back to all-zero logits, i.e. the uniform row.
"""

from __future__ import annotations

import json
import math
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .ctc import Vocabulary
from .errors import InputDomainError

BOS = -1
FULL = "full"
LOG_FLOOR = -30.0
FORMAT_VERSION = 1


def log_softmax(z: np.ndarray) -> np.ndarray:
    m = np.max(z, axis=-1, keepdims=True)
    shifted = z - m
    with np.errstate(divide="ignore"):
        return shifted - np.log(np.sum(np.exp(shifted), axis=-1, keepdims=True))


def softmax(z: np.ndarray) -> np.ndarray:
    return np.exp(log_softmax(z))


class CtxLM:
    def __init__(self, vocab_size: int, order=FULL, logits: dict | None = None, *, has_eos: bool = True):
        if order != FULL and (not isinstance(order, (int, np.integer)) or order < 0):
            raise InputDomainError(f"context order must be a nonnegative int or 'full', got {order!r}")
        if vocab_size < 1:
            raise InputDomainError("vocabulary size must be >= 1")
        self.vocab_size = int(vocab_size)
        self.order = order if order == FULL else int(order)
        self.has_eos = has_eos
        self.logits: dict[tuple[int, ...], np.ndarray] = {}
        for ctx, row in (logits or {}).items():
            self.set_logits(ctx, row)

    @property
    def width(self) -> int:
        return self.vocab_size + 1

    @property
    def eos(self) -> int:
        return self.vocab_size

    def context(self, prefix: Sequence[int]) -> tuple[int, ...]:
        prefix = tuple(int(a) for a in prefix)
        if self.order == FULL:
            return prefix
        if self.order == 0:
            return ()
        tail = prefix[-self.order:]
        return (BOS,) * (self.order - len(tail)) + tail

    def _check_ctx(self, ctx):
        for a in ctx:
            if a != BOS and not 0 <= a < self.vocab_size:
                raise InputDomainError(f"context symbol {a} is not a label or BOS")
        if self.order != FULL and len(ctx) != self.order:
            raise InputDomainError(f"context {ctx} has wrong length for order {self.order}")
        if self.order == FULL and BOS in ctx:
            raise InputDomainError("full-context keys cannot contain BOS")
        if self.order != FULL and BOS in ctx:
            first_label = next((i for i, a in enumerate(ctx) if a != BOS), len(ctx))
            if any(a == BOS for a in ctx[first_label:]):
                raise InputDomainError(f"BOS padding must be on the left: {ctx}")

    def set_logits(self, ctx, row):
        ctx = tuple(int(a) for a in ctx)
        self._check_ctx(ctx)
        row = np.array(row, dtype=np.float64)
        if row.shape != (self.width,):
            raise InputDomainError(f"logit row must have {self.width} entries")
        self.logits[ctx] = row

    def logit_row(self, ctx) -> np.ndarray:
        row = self.logits.get(tuple(ctx))
        if row is None:
            row = np.zeros(self.width)
            if not self.has_eos:
                row[self.eos] = -np.inf
        return row

    def log_probs(self, prefix: Sequence[int]) -> np.ndarray:
        return log_softmax(self.logit_row(self.context(prefix)))

    def probs(self, prefix: Sequence[int]) -> np.ndarray:
        return np.exp(self.log_probs(prefix))

    def step_log_probs(self, seq: Sequence[int], eos: bool | None = None) -> list[float]:
        """Per-step log-probabilities of ``seq``, plus the EOS step when applicable."""
        seq = tuple(int(a) for a in seq)
        if eos is None:
            eos = self.has_eos
        out = [float(self.log_probs(seq[:s])[a]) for s, a in enumerate(seq)]
        if eos:
            out.append(float(self.log_probs(seq)[self.eos]))
        return out

    def seq_log_prob(self, seq: Sequence[int], eos: bool | None = None) -> float:
        return float(sum(self.step_log_probs(seq, eos)))

    def copy(self) -> "CtxLM":
        return CtxLM(self.vocab_size, self.order, {k: v.copy() for k, v in self.logits.items()}, has_eos=self.has_eos)

    def __repr__(self):
        return f"CtxLM(V={self.vocab_size}, order={self.order}, contexts={len(self.logits)}, has_eos={self.has_eos})"


def uniform_lm(vocab_size: int, order=0) -> CtxLM:
    return CtxLM(vocab_size, order)


def perplexity(model: CtxLM, eval_set: Iterable[Sequence[int]], log_floor: float | None = LOG_FLOOR) -> float:
    """exp of the mean negative log-likelihood per step.

    Every label step counts, plus one EOS step per sequence for models that
    predict EOS. ``log_floor=None`` disables flooring, so a zero-probability
    step yields ``inf``.
    """
    total = 0.0
    n_steps = 0
    for seq in eval_set:
        for lp in model.step_log_probs(seq):
            if log_floor is not None:
                lp = max(lp, log_floor)
            if lp == -math.inf:
                return math.inf
            total += lp
            n_steps += 1
    if n_steps == 0:
        raise InputDomainError("perplexity needs at least one step")
    return math.exp(-total / n_steps)


def lm_to_json(model: CtxLM, vocab: Vocabulary) -> dict:
    entries = []
    for ctx in sorted(model.logits, key=lambda c: (len(c), c)):
        row = model.logits[ctx]
        entries.append(
            {
                "context": ["BOS" if a == BOS else a for a in ctx],
                "logits": [None if not np.isfinite(x) else float(x) for x in row],
            }
        )
    return {
        "version": FORMAT_VERSION,
        "vocab": list(vocab.labels),
        "context_order": model.order,
        "has_eos": model.has_eos,
        "entries": entries,
    }


def lm_from_json(obj: dict) -> tuple[CtxLM, Vocabulary]:
    try:
        vocab = Vocabulary(tuple(obj["vocab"]))
        order = obj["context_order"]
        model = CtxLM(vocab.size, order, has_eos=bool(obj.get("has_eos", True)))
        for entry in obj["entries"]:
            ctx = tuple(BOS if a == "BOS" else int(a) for a in entry["context"])
            row = [-np.inf if x is None else float(x) for x in entry["logits"]]
            model.set_logits(ctx, row)
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, InputDomainError):
            raise
        raise InputDomainError(f"malformed LM object: {exc}") from None
    return model, vocab


def save_lm(path, model: CtxLM, vocab: Vocabulary):
    Path(path).write_text(json.dumps(lm_to_json(model, vocab)))


def load_lm(path) -> tuple[CtxLM, Vocabulary]:
    return lm_from_json(json.loads(Path(path).read_text()))
