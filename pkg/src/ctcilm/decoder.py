"""Time-synchronous CTC prefix beam search with shallow fusion and ILM correction.

The fused objective for a label sequence ``a`` is

    acoustic(a) + lambda1 * log P_elm(a, EOS) - lambda2 * log P_ilm(a, EOS)

where ``acoustic`` is the best-path (``viterbi_max``) or summed (``full_sum``)
alignment score over frame rows ``log P(y|t) - lambda3 * log P_fp(y)``.
LM factors are applied once per emitted label and the EOS factors at the end;
models without EOS (the unigram prior) contribute no EOS factor.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from .ctc import NEG_INF, PosteriorGrid, collapse, enumerate_alignments
from .errors import DecodeError, InputDomainError
from .ilm import FramePrior
from .lm import LOG_FLOOR, CtxLM

MODES = ("viterbi_max", "full_sum")


@dataclass(frozen=True)
class FusionScales:
    lambda1: float = 0.0
    lambda2: float = 0.0
    lambda3: float = 0.0
    mode: str = "viterbi_max"
    beam: int | None = 8  # None means no pruning
    eos_factors: bool = True

    def __post_init__(self):
        for x in (self.lambda1, self.lambda2, self.lambda3):
            if not math.isfinite(x):
                raise InputDomainError("fusion scales must be finite")
        if self.mode not in MODES:
            raise InputDomainError(f"mode must be one of {MODES}")
        if self.beam is not None and self.beam < 1:
            raise InputDomainError("beam must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class DecodeResult:
    best: tuple[int, ...]
    log_score: float
    n_best: list[tuple[tuple[int, ...], float]]


def apply_frame_prior(row, prior: FramePrior | None, lambda3: float, log_floor: float = LOG_FLOOR) -> np.ndarray:
    """log P(y|t) - lambda3 * log P_fp(y), per symbol including blank; not renormalised."""
    row = np.asarray(row, dtype=np.float64)
    if prior is None or lambda3 == 0.0:
        return row.copy()
    with np.errstate(divide="ignore"):
        log_prior = np.maximum(np.log(prior.probs), log_floor)
    return row - lambda3 * log_prior


def adjusted_rows(grid: PosteriorGrid, prior: FramePrior | None, lambda3: float) -> np.ndarray:
    return np.array([apply_frame_prior(r, prior, lambda3) for r in grid.log_probs]).reshape(grid.log_probs.shape)


class _Fusion:
    """Per-label LM increments, memoised per prefix and per model context."""

    def __init__(self, elm: CtxLM | None, ilm: CtxLM | None, scales: FusionScales, log_floor: float):
        self.terms = []
        if elm is not None and scales.lambda1 != 0.0:
            self.terms.append((elm, scales.lambda1))
        if ilm is not None and scales.lambda2 != 0.0:
            self.terms.append((ilm, -scales.lambda2))
        self.eos_factors = scales.eos_factors
        self.log_floor = log_floor
        self._rows: dict = {}
        self._incs: dict = {}

    def _row(self, i: int, model: CtxLM, prefix):
        key = (i, model.context(prefix))
        row = self._rows.get(key)
        if row is None:
            row = model.log_probs(prefix)
            if self.log_floor is not None:
                row = np.maximum(row, self.log_floor)
            self._rows[key] = row
        return row

    def increments(self, prefix) -> list[float]:
        """Fused log-increment for every label after ``prefix``, EOS last."""
        inc = self._incs.get(prefix)
        if inc is None:
            acc = None
            eos = 0.0
            for i, (m, scale) in enumerate(self.terms):
                row = self._row(i, m, prefix)
                part = scale * row[: m.vocab_size]
                acc = part if acc is None else acc + part
                if self.eos_factors and m.has_eos:
                    eos += scale * float(row[m.eos])
            inc = ([] if acc is None else acc.tolist()) + [eos]
            self._incs[prefix] = inc
        return inc

    def label(self, prefix, c) -> float:
        inc = self.increments(prefix)
        return inc[c] if len(inc) > 1 else 0.0

    def eos(self, prefix) -> float:
        return self.increments(prefix)[-1]

    def sequence(self, seq) -> float:
        return sum(self.label(seq[:s], c) for s, c in enumerate(seq)) + self.eos(seq)


def _check_models(grid: PosteriorGrid, *models):
    for m in models:
        if m is not None and m.vocab_size != grid.n_labels:
            raise InputDomainError("models and grid must share the vocabulary")


def _rank_key(item):
    seq, score = item
    return (-score, len(seq), seq)


def _lae(a: float, b: float) -> float:
    if a == NEG_INF:
        return b
    if b == NEG_INF:
        return a
    if a > b:
        return a + math.log1p(math.exp(b - a))
    return b + math.log1p(math.exp(a - b))


def decode_fused(
    grid: PosteriorGrid,
    elm: CtxLM | None = None,
    ilm: CtxLM | None = None,
    prior: FramePrior | None = None,
    scales: FusionScales = FusionScales(),
    log_floor: float = LOG_FLOOR,
) -> DecodeResult:
    _check_models(grid, elm, ilm)
    rows = adjusted_rows(grid, prior, scales.lambda3).tolist()
    fusion = _Fusion(elm, ilm, scales, log_floor)
    comb = max if scales.mode == "viterbi_max" else _lae
    blank = grid.blank
    n_labels = grid.n_labels
    beam = scales.beam

    # prefix -> [log_b, log_nb, fused_lm]
    hyps: dict[tuple[int, ...], list[float]] = {(): [0.0, NEG_INF, 0.0]}
    for row in rows:
        nxt: dict[tuple[int, ...], list[float]] = {}
        for h, (b, nb, lm) in hyps.items():
            tot = comb(b, nb)
            inc = fusion.increments(h)
            fused = len(inc) > 1
            st = nxt.get(h)
            if st is None:
                st = nxt[h] = [NEG_INF, NEG_INF, lm]
            if tot != NEG_INF:
                st[0] = comb(st[0], tot + row[blank])
            if h and nb != NEG_INF:
                st[1] = comb(st[1], nb + row[h[-1]])
            for c in range(n_labels):
                src = b if h and c == h[-1] else tot
                if src == NEG_INF or row[c] == NEG_INF:
                    continue
                hc = h + (c,)
                st = nxt.get(hc)
                if st is None:
                    st = nxt[hc] = [NEG_INF, NEG_INF, lm + inc[c] if fused else lm]
                st[1] = comb(st[1], src + row[c])
        live = [(h, comb(v[0], v[1]) + v[2]) for h, v in nxt.items() if comb(v[0], v[1]) != NEG_INF]
        if beam is not None and len(live) > beam:
            live.sort(key=_rank_key)
            live = live[:beam]
        hyps = {h: nxt[h] for h, _ in live}
        if not hyps:
            raise DecodeError("all hypotheses have -inf score")

    finals = [(h, comb(v[0], v[1]) + v[2] + fusion.eos(h)) for h, v in hyps.items()]
    finals = [f for f in finals if f[1] != NEG_INF]
    if not finals:
        raise DecodeError("all final hypotheses have -inf score")
    finals.sort(key=_rank_key)
    n_keep = len(finals) if beam is None else min(beam, len(finals))
    best, score = finals[0]
    return DecodeResult(best, score, finals[:n_keep])


def brute_force_scores(
    grid: PosteriorGrid,
    elm: CtxLM | None = None,
    ilm: CtxLM | None = None,
    prior: FramePrior | None = None,
    scales: FusionScales = FusionScales(),
    log_floor: float = LOG_FLOOR,
) -> dict:
    """Fused score of every collapsible sequence, by alignment enumeration."""
    _check_models(grid, elm, ilm)
    adjusted = PosteriorGrid(adjusted_rows(grid, prior, scales.lambda3), validate=False)
    acoustic: dict[tuple[int, ...], float] = {}
    for path, lp in enumerate_alignments(adjusted):
        seq = collapse(path, grid.blank)
        prev = acoustic.get(seq, NEG_INF)
        acoustic[seq] = max(prev, lp) if scales.mode == "viterbi_max" else float(np.logaddexp(prev, lp))
    fusion = _Fusion(elm, ilm, scales, log_floor)
    return {seq: a + fusion.sequence(seq) for seq, a in acoustic.items() if a != NEG_INF}


def brute_force_decode(grid, elm=None, ilm=None, prior=None, scales: FusionScales = FusionScales(), log_floor=LOG_FLOOR):
    scores = brute_force_scores(grid, elm, ilm, prior, scales, log_floor)
    if not scores:
        raise DecodeError("no sequence has finite score")
    best, score = min(scores.items(), key=_rank_key)
    return best, score


def label_error_rate(hyp: Sequence[int], ref: Sequence[int]) -> tuple[int, float]:
    """Levenshtein distance over label indices and distance / max(1, |ref|)."""
    hyp, ref = list(hyp), list(ref)
    prev = list(range(len(ref) + 1))
    for i, h in enumerate(hyp, 1):
        cur = [i] + [0] * len(ref)
        for j, r in enumerate(ref, 1):
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (h != r))
        prev = cur
    dist = prev[-1]
    return dist, dist / max(1, len(ref))


def corpus_ler(pairs: Sequence[tuple[Sequence[int], Sequence[int]]]) -> float:
    """Total edits over total reference labels (pairs are (hyp, ref))."""
    edits = sum(label_error_rate(h, r)[0] for h, r in pairs)
    return edits / max(1, sum(len(r) for _, r in pairs))


def decode_report_line(grid_id, ref, result: DecodeResult, scales: FusionScales) -> str:
    return json.dumps(
        {
            "grid_id": grid_id,
            "ref": None if ref is None else list(ref),
            "hyp": list(result.best),
            "log_score": result.log_score,
            "scales": scales.to_dict(),
            "mode": scales.mode,
        }
    )
