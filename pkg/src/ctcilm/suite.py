"""Cross-domain experiment: ILMs estimated on a source world, decoding target grids.

The simulated acoustic model has absorbed the source domain's label
transitions: whenever a frame is ambiguous, the leftover mass follows the
source bigram given the previous true label. Target utterances follow a
different bigram, so the source bias has to be removed at decode time.
All knob values live in ``recipes/cross_domain.json``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from importlib import resources
from typing import Sequence

import numpy as np

from .ctc import PosteriorGrid, Vocabulary
from .data import TrainingPair, World
from .decoder import FusionScales
from .ilm import FramePrior, TrainConfig, estimate_frame_prior, train, unigram_from_prior
from .lm import CtxLM, perplexity
from .seeding import child_seed, stream
from .tuning import evaluate_scales, tune_scales
from .worldgen import make_elm, sample_dataset, sample_from_lm


def load_recipe(path=None) -> dict:
    if path is None:
        return json.loads(resources.files("ctcilm").joinpath("recipes/cross_domain.json").read_text())
    with open(path) as fh:
        return json.load(fh)


def shifted_bigram(vocab_size: int, shift: int, peak: float, eos_prob: float) -> CtxLM:
    """Bigram with mass ``peak`` on label (prev + shift) mod V; BOS row is uniform."""
    lm = CtxLM(vocab_size, 1)
    with np.errstate(divide="ignore"):
        bos = np.append(np.full(vocab_size, 1.0 / vocab_size), 0.0)
        lm.set_logits((-1,), np.log(bos))
        for a in range(vocab_size):
            row = np.full(vocab_size + 1, max(0.0, 1.0 - peak - eos_prob) / max(1, vocab_size - 1))
            row[(a + shift) % vocab_size] = peak
            row[vocab_size] = eos_prob
            if vocab_size == 1:
                row[0] = 1.0 - eos_prob
            lm.set_logits((a,), np.log(row))
    return lm


def simulate_grid(labels: Sequence[int], bias_lm: CtxLM, ac: dict, rng: np.random.Generator) -> tuple[PosteriorGrid, tuple[int, ...]]:
    """Posterior grid for a true label sequence, with ambiguity mass biased by ``bias_lm``.

    Returns the grid and the 1-based end frame of each label.
    """
    vocab_size = bias_lm.vocab_size
    width = vocab_size + 1
    floor = ac["bias_floor"]

    def bias(prev):
        p = bias_lm.probs(() if prev is None else (prev,))[:vocab_size]
        p = (1 - floor) * p / p.sum() + floor / vocab_size
        return p

    rows = []
    ends = []
    prev = None
    lo_l, hi_l = ac["label_frames"]
    lo_b, hi_b = ac["blank_frames"]

    def blank_row(prev):
        c = rng.uniform(*ac["blank_clarity"])
        r = np.zeros(width)
        r[vocab_size] = c
        r[:vocab_size] = (1 - c) * bias(prev)
        return r

    for a in labels:
        for _ in range(int(rng.integers(lo_b, hi_b + 1))):
            rows.append(blank_row(prev))
        for _ in range(int(rng.integers(lo_l, hi_l + 1))):
            c = rng.uniform(*ac["label_clarity"])
            r = np.zeros(width)
            r[:vocab_size] = (1 - c) * (1 - ac["blank_share"]) * bias(prev)
            r[vocab_size] = (1 - c) * ac["blank_share"]
            r[a] += c
            rows.append(r)
        ends.append(len(rows))
        prev = a
    for _ in range(int(rng.integers(lo_b, hi_b + 1))):
        rows.append(blank_row(prev))
    if not rows:
        rows.append(blank_row(prev))
    probs = np.array(rows)
    return PosteriorGrid.from_probs(probs / probs.sum(axis=1, keepdims=True)), tuple(ends)


@dataclass
class DomainPair:
    vocab: Vocabulary
    source_world: World
    source_pairs: list[TrainingPair]
    target_dev: list[tuple[PosteriorGrid, tuple[int, ...]]]
    target_test: list[tuple[PosteriorGrid, tuple[int, ...]]]
    source_elm: CtxLM
    target_elm: CtxLM
    source_text: list[tuple[int, ...]]
    target_text: list[tuple[int, ...]]
    recipe: dict = field(default_factory=dict)


def _utterances(lm: CtxLM, n: int, rng, max_len: int) -> list[tuple[int, ...]]:
    out = []
    while len(out) < n:
        seq = sample_from_lm(lm, 1, rng, max_len)[0]
        if seq:
            out.append(seq)
    return out


def cross_domain_suite(seed: int, recipe: dict | None = None) -> DomainPair:
    recipe = recipe or load_recipe()
    v = recipe["vocab_size"]
    lmr = recipe["lm"]
    sizes = recipe["sizes"]
    src_lm = shifted_bigram(v, lmr["source_shift"], lmr["source_peak"], lmr["eos_prob"])
    tgt_lm = shifted_bigram(v, lmr["target_shift"], lmr["target_peak"], lmr["eos_prob"])
    ac = recipe["acoustics"]
    max_len = recipe["max_len"]

    rng = stream(seed, "source-utterances")
    src_utts = _utterances(src_lm, sizes["source_grids"], rng, max_len)
    rng = stream(seed, "source-acoustics")
    src_grids = [simulate_grid(u, src_lm, ac, rng)[0] for u in src_utts]
    vocab = Vocabulary.of_size(v)
    world = World(vocab, src_grids, np.full(len(src_grids), 1.0 / len(src_grids)))
    pairs = sample_dataset(world, sizes["train_pairs"], child_seed(seed, "train-pairs"))

    def target_split(name, n):
        rng_u = stream(seed, f"{name}-utterances")
        rng_a = stream(seed, f"{name}-acoustics")
        return [(simulate_grid(u, src_lm, ac, rng_a)[0], u) for u in _utterances(tgt_lm, n, rng_u, max_len)]

    dev = target_split("target-dev", sizes["target_dev"])
    test = target_split("target-test", sizes["target_test"])
    er = recipe["elm"]
    src_text = _utterances(src_lm, sizes["elm_corpus"], stream(seed, "source-text"), max_len)
    tgt_text = _utterances(tgt_lm, sizes["elm_corpus"], stream(seed, "target-text"), max_len)
    src_elm = make_elm(src_text, v, er["order"], er["delta"])
    tgt_elm = make_elm(tgt_text, v, er["order"], er["delta"])
    return DomainPair(vocab, world, pairs, dev, test, src_elm, tgt_elm, src_text, tgt_text, recipe)


def elm_mismatch(suite: DomainPair) -> dict:
    n = 500
    src, tgt = suite.source_text[:n], suite.target_text[:n]
    return {
        "source_elm_on_source": perplexity(suite.source_elm, src),
        "source_elm_on_target": perplexity(suite.source_elm, tgt),
        "target_elm_on_target": perplexity(suite.target_elm, tgt),
        "target_elm_on_source": perplexity(suite.target_elm, src),
    }


def train_ilms(suite: DomainPair, seed: int) -> dict:
    """Unigram (from the frame prior) and smoothed label-KD ILMs on source data."""
    t = suite.recipe["ilm_training"]
    prior = estimate_frame_prior(suite.source_pairs, suite.source_world)
    cfg = TrainConfig(
        criterion="label_smoothed",
        mode="sampled",
        step_size=t["step_size"],
        epochs=t["epochs"],
        batch_size=t["batch_size"],
        alpha=t["alpha"],
        seed=child_seed(seed, "ilm-training"),
    )
    student = CtxLM(suite.vocab.size, t["context_order"])
    kd = train(student, suite.source_pairs, suite.source_world, cfg).student
    return {"prior": prior, "unigram": unigram_from_prior(prior), "label_kd_smoothed": kd}


def run_cross_domain(seed: int, recipe: dict | None = None, suite: DomainPair | None = None) -> dict:
    """Tune each system on the target dev split and report target test LER."""
    suite = suite or cross_domain_suite(seed, recipe)
    r = suite.recipe
    ilms = train_ilms(suite, seed)
    mode, beam = r["decode"]["mode"], r["decode"]["beam"]
    l1s, l2s = r["tuning"]["lambda1"], r["tuning"]["lambda2"]
    systems = {
        "no_lm": (None, None, [0.0], [0.0]),
        "shallow_fusion": (suite.target_elm, None, l1s, [0.0]),
        "unigram": (suite.target_elm, ilms["unigram"], l1s, l2s),
        "label_kd_smoothed": (suite.target_elm, ilms["label_kd_smoothed"], l1s, l2s),
    }
    out = {"seed": seed, "systems": {}}
    for name, (elm, ilm, g1, g2) in systems.items():
        tuned = tune_scales(suite.target_dev, elm, ilm, None, g1, g2, [0.0], mode, beam)
        sel = tuned.selected
        scales = FusionScales(sel["lambda1"], sel["lambda2"], 0.0, mode, beam)
        test_ler, failed, _ = evaluate_scales(suite.target_test, elm, ilm, None, scales)
        out["systems"][name] = {"dev_ler": sel["ler"], "test_ler": test_ler, "lambda1": sel["lambda1"], "lambda2": sel["lambda2"], "decode_failed": failed}
    return out
