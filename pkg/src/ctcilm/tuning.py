"""Exhaustive fusion-scale grid search on a tuning split."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Sequence

from .ctc import PosteriorGrid
from .decoder import FusionScales, corpus_ler, decode_fused
from .errors import DecodeError, InputDomainError

SELECTION_RULE = "min LER; ties -> smallest lambda2, then lambda3, then lambda1"


@dataclass
class ScaleGridResult:
    rows: list[dict]
    selected: dict
    selection_rule: str = SELECTION_RULE
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"rows": self.rows, "selected": self.selected, "selection_rule": self.selection_rule}


def evaluate_scales(split, elm, ilm, prior, scales: FusionScales) -> tuple[float, bool, list]:
    """Corpus LER on ``split`` (list of (grid, ref)); any decode failure gives LER 1.0."""
    hyps = []
    for grid, ref in split:
        try:
            hyps.append((decode_fused(grid, elm, ilm, prior, scales).best, ref))
        except DecodeError:
            return 1.0, True, []
    return corpus_ler(hyps), False, [h for h, _ in hyps]


def tune_scales(
    split: Sequence[tuple[PosteriorGrid, Sequence[int]]],
    elm,
    ilm,
    prior,
    lambda1s: Sequence[float],
    lambda2s: Sequence[float],
    lambda3s: Sequence[float] = (0.0,),
    mode: str = "viterbi_max",
    beam: int | None = 8,
) -> ScaleGridResult:
    if not split:
        raise InputDomainError("tuning split is empty")
    if not lambda1s or not lambda2s or not lambda3s:
        raise InputDomainError("scale grids must be non-empty")
    rows = []
    for l1, l2, l3 in itertools.product(lambda1s, lambda2s, lambda3s):
        scales = FusionScales(float(l1), float(l2), float(l3), mode, beam)
        ler, failed, _ = evaluate_scales(split, elm, ilm, prior, scales)
        rows.append({"lambda1": float(l1), "lambda2": float(l2), "lambda3": float(l3), "ler": ler, "decode_failed": failed})
    selected = min(rows, key=lambda r: (r["ler"], r["lambda2"], r["lambda3"], r["lambda1"]))
    return ScaleGridResult(rows, dict(selected))
