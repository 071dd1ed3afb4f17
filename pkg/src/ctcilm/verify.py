"""Oracle verification suite: every check compares a fast path to an independent one."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .ctc import (
    NEG_INF,
    PosteriorGrid,
    Vocabulary,
    brute_force_seq_log_distribution,
    ctc_log_prob,
    label_posterior_row,
    prefix_log_prob,
)
from .data import TrainingPair, World
from .decoder import FusionScales, brute_force_scores, decode_fused
from .ilm import (
    FramePrior,
    TrainConfig,
    beta_matrix,
    ce_transcription_loss,
    estimate_frame_prior,
    exact_ilm_posterior,
    kd_label_loss,
    kd_label_loss_masked,
    kd_label_loss_smoothed,
    kd_seq_loss,
    train,
    unigram_from_prior,
)
from .lm import FULL, CtxLM, softmax
from .oracles import finite_difference_grad, gradient_relative_error, smoothed_loss_direct
from .worldgen import WorldSpec, build_world, joint_pairs, random_rows, sample_dataset


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0

    def line(self) -> str:
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.name}: {self.detail} ({self.seconds:.2f}s)"


def _timed(name: str, fn: Callable[[], tuple[bool, str]]) -> CheckResult:
    t0 = time.perf_counter()
    passed, detail = fn()
    return CheckResult(name, bool(passed), detail, time.perf_counter() - t0)


def random_grid(rng: np.random.Generator, n_frames: int, n_labels: int, concentration: float = 1.0) -> PosteriorGrid:
    return PosteriorGrid.from_probs(random_rows(rng, n_frames, n_labels + 1, concentration))


def random_lm(rng: np.random.Generator, vocab_size: int, order, contexts, scale: float = 1.5) -> CtxLM:
    lm = CtxLM(vocab_size, order)
    for prefix in contexts:
        ctx = lm.context(prefix)
        if ctx not in lm.logits:
            lm.set_logits(ctx, rng.normal(0.0, scale, vocab_size + 1))
    return lm


def all_prefixes(n_labels: int, max_len: int):
    out = [()]
    frontier = [()]
    for _ in range(max_len):
        frontier = [p + (c,) for p in frontier for c in range(n_labels)]
        out.extend(frontier)
    return out


# ---------------------------------------------------------------------------


def check_ctc_oracle(n_grids: int = 50, seed: int = 0) -> CheckResult:
    """ctc_log_prob / prefix_log_prob against alignment enumeration; total mass 1."""

    def run():
        rng = np.random.default_rng(seed)
        worst = 0.0
        worst_mass = 0.0
        for _ in range(n_grids):
            grid = random_grid(rng, int(rng.integers(1, 7)), int(rng.integers(1, 4)))
            bf = brute_force_seq_log_distribution(grid)
            worst_mass = max(worst_mass, abs(math.fsum(math.exp(v) for v in bf.values()) - 1.0))
            for seq, lp in bf.items():
                worst = max(worst, abs(ctc_log_prob(grid, seq) - lp))
            for prefix in all_prefixes(grid.n_labels, grid.n_frames + 1):
                masses = [v for s, v in bf.items() if s[: len(prefix)] == prefix]
                ref = float(np.logaddexp.reduce(masses)) if masses else NEG_INF
                got = prefix_log_prob(grid, prefix)
                if ref == NEG_INF or got == NEG_INF:
                    if ref != got:
                        return False, f"prefix {prefix}: {got} vs {ref}"
                else:
                    worst = max(worst, abs(got - ref))
        return worst < 1e-10 and worst_mass < 1e-10, f"max |dlog|={worst:.2e}, max |mass-1|={worst_mass:.2e}"

    return _timed("ctc_oracle", run)


def check_posterior_rows(n_grids: int = 50, seed: int = 0) -> CheckResult:
    """Posterior rows sum to 1 and their EOS entry is P(prefix)/P(prefix, ...)."""

    def run():
        rng = np.random.default_rng(seed)
        worst_sum = 0.0
        worst_eos = 0.0
        n_rows = 0
        for _ in range(n_grids):
            grid = random_grid(rng, int(rng.integers(1, 7)), int(rng.integers(1, 4)))
            bf = brute_force_seq_log_distribution(grid)
            for prefix in all_prefixes(grid.n_labels, grid.n_frames):
                masses = [v for s, v in bf.items() if s[: len(prefix)] == prefix]
                if not masses:
                    continue
                row = label_posterior_row(grid, prefix)
                n_rows += 1
                worst_sum = max(worst_sum, abs(row.sum() - 1.0))
                eos = math.exp(bf.get(prefix, NEG_INF) - float(np.logaddexp.reduce(masses)))
                worst_eos = max(worst_eos, abs(row[-1] - eos))
        return worst_sum < 1e-9 and worst_eos < 1e-10, f"{n_rows} rows, max |sum-1|={worst_sum:.2e}, max |dEOS|={worst_eos:.2e}"

    return _timed("posterior_rows", run)


def optimum_worlds(n_worlds: int = 3, seed: int = 0) -> list[World]:
    rng = np.random.default_rng(seed)
    worlds = []
    for i in range(n_worlds):
        spec = WorldSpec(
            vocab_size=int(rng.integers(2, 4)),
            t_min=2,
            t_max=4,
            n_grids=int(rng.integers(2, 5)),
            concentration=1.0,
            seed=seed * 1000 + i,
        )
        worlds.append(build_world(spec))
    return worlds


def optimum_gap(world: World, steps: int = 200_000) -> tuple[float, int]:
    """Train a FULL-context student on the exact joint; worst TV to the exact ILM posterior."""
    cfg = TrainConfig(
        criterion="label",
        mode="exact_expectation",
        step_size=2.0,
        epochs=steps,
        trace_every=steps,
        precondition="mass",
    )
    student = train(CtxLM(world.vocab.size, FULL), None, world, cfg).student
    contexts = {p.labels[:s] for p in joint_pairs(world) for s in range(len(p.labels) + 1)}
    worst = 0.0
    for ctx in contexts:
        tv = 0.5 * float(np.abs(student.probs(ctx) - exact_ilm_posterior(world, ctx)).sum())
        worst = max(worst, tv)
    return worst, len(contexts)


def check_exact_optimum(n_worlds: int = 3, seed: int = 0, steps: int = 200_000) -> CheckResult:
    def run():
        details = []
        ok = True
        for world in optimum_worlds(n_worlds, seed):
            t0 = time.perf_counter()
            gap, n_ctx = optimum_gap(world, steps)
            dt = time.perf_counter() - t0
            ok &= gap < 1e-4 and dt < 60.0
            details.append(f"K={world.n_grids} V={world.vocab.size}: TV={gap:.1e} over {n_ctx} ctx in {dt:.1f}s")
        return ok, "; ".join(details)

    return _timed("exact_optimum", run)


def small_batches(n_batches: int, seed: int, sizes=(2, 4), with_boundaries: bool = True):
    """Seeded (world, batch, student) triples with a FULL or order-1 student."""
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n_batches):
        world = build_world(WorldSpec(int(rng.integers(2, 4)), 2, 4, int(rng.integers(1, 4)), 1.0, seed * 7919 + i))
        size = int(rng.integers(sizes[0], sizes[1] + 1))
        batch = sample_dataset(world, size, seed * 104729 + i)
        order = FULL if rng.random() < 0.5 else 1
        prefixes = [p.labels[:s] for p in batch for s in range(len(p.labels) + 1)]
        student = random_lm(rng, world.vocab.size, order, prefixes, scale=0.7)
        out.append((world, batch, student))
    return out


def check_smoothing_identity(seed: int = 0) -> CheckResult:
    def run():
        worst = 0.0
        count = 0
        for world, batch, student in small_batches(8, seed, (2, 4)):
            for alpha in (0.0, 0.3, 0.5, 1.0):
                loss, _ = kd_label_loss_smoothed(student, batch, world, alpha)
                direct = smoothed_loss_direct(student, batch, world, alpha)
                worst = max(worst, abs(loss - direct))
                count += 1
        return worst < 1e-10, f"{count} (batch, alpha) cases, max |double sum - direct|={worst:.2e}"

    return _timed("smoothing_identity", run)


def _loss_fns(world, batch, prior):
    return {
        "label": lambda st: kd_label_loss(st, batch, world),
        "label_smoothed": lambda st: kd_label_loss_smoothed(st, batch, world, 0.5),
        "label_masked": lambda st: kd_label_loss_masked(st, batch, world, 0.5, "uniform", np.random.default_rng(11), prior),
        "seq": lambda st: kd_seq_loss(st, batch, world, 0.5),
        "ce": lambda st: ce_transcription_loss(st, batch),
    }


def check_gradients(n_batches: int = 20, seed: int = 0, h: float = 1e-5) -> CheckResult:
    def run():
        worst = {}
        for world, batch, student in small_batches(n_batches, seed, (1, 3)):
            for name, fn in _loss_fns(world, batch, None).items():
                _, grad = fn(student)
                if not grad:
                    continue
                numeric = finite_difference_grad(lambda st: fn(st)[0], student, list(grad), h)
                worst[name] = max(worst.get(name, 0.0), gradient_relative_error(grad, numeric))
        ok = all(v < 1e-5 for v in worst.values()) and len(worst) == 5
        return ok, ", ".join(f"{k}={v:.1e}" for k, v in worst.items())

    return _timed("gradients", run)


def check_smoothing_reduction(seed: int = 0) -> CheckResult:
    def run():
        worst = 0.0
        for world, batch, student in small_batches(10, seed, (1, 4)):
            plain, _ = kd_label_loss(student, batch, world)
            smooth, _ = kd_label_loss_smoothed(student, batch, world, 1.0)
            worst = max(worst, abs(plain - smooth))
        rng = np.random.default_rng(seed)
        beta_worst = 0.0
        for _ in range(50):
            n = int(rng.integers(1, 9))
            b = beta_matrix(n, float(rng.random()))
            beta_worst = max(beta_worst, float(np.abs(b.sum(axis=1) - 1).max()))
            if b.min() < 0:
                return False, "negative beta"
        return worst < 1e-12 and beta_worst < 1e-12, f"max |alpha=1 - plain|={worst:.1e}, max |sum beta - 1|={beta_worst:.1e}"

    return _timed("smoothing_reduction", run)


def random_decoder_instance(rng: np.random.Generator):
    n_labels = int(rng.integers(1, 4))
    grid = random_grid(rng, int(rng.integers(1, 6)), n_labels, concentration=float(rng.choice([0.3, 1.0, 3.0])))
    prefixes = all_prefixes(n_labels, grid.n_frames)
    elm = random_lm(rng, n_labels, int(rng.choice([1, 2])), prefixes)
    kind = rng.integers(0, 3)
    if kind == 0:
        ilm = random_lm(rng, n_labels, FULL, prefixes)
    elif kind == 1:
        ilm = random_lm(rng, n_labels, 1, prefixes)
    else:
        ilm = unigram_from_prior(FramePrior(rng.dirichlet(np.ones(n_labels + 1))))
    prior = FramePrior(rng.dirichlet(np.ones(n_labels + 1))) if rng.random() < 0.5 else None
    l1, l2, l3 = (float(x) for x in rng.uniform(0, 2, 3))
    return grid, elm, ilm, prior, (l1, l2, l3)


def _same_decision(result, scores, tol=1e-9) -> tuple[bool, float]:
    ranked = sorted(scores.items(), key=lambda kv: (-kv[1], len(kv[0]), kv[0]))
    best_seq, best_score = ranked[0]
    diff = abs(result.log_score - best_score)
    if diff > tol * max(1.0, abs(best_score)):
        return False, diff
    if result.best == best_seq:
        return True, diff
    # a different sequence is acceptable only at a numerical tie
    return abs(scores.get(result.best, NEG_INF) - best_score) <= tol * max(1.0, abs(best_score)), diff


def check_decoder_oracle(n_instances: int = 100, seed: int = 0) -> CheckResult:
    def run():
        rng = np.random.default_rng(seed)
        worst = 0.0
        n_cases = 0
        for _ in range(n_instances):
            grid, elm, ilm, prior, (l1, l2, l3) = random_decoder_instance(rng)
            for mode in ("viterbi_max", "full_sum"):
                scales = FusionScales(l1, l2, l3, mode, None)
                result = decode_fused(grid, elm, ilm, prior, scales)
                ok, diff = _same_decision(result, brute_force_scores(grid, elm, ilm, prior, scales))
                worst = max(worst, diff)
                n_cases += 1
                if not ok:
                    return False, f"mismatch on case {n_cases}: {result.best} vs brute force"
                uniform = FramePrior(np.full(grid.n_labels + 1, 1.0 / (grid.n_labels + 1)))
                a = decode_fused(grid, elm, ilm, uniform, FusionScales(l1, l2, l3, mode, None)).best
                b = decode_fused(grid, elm, ilm, None, FusionScales(l1, l2, 0.0, mode, None)).best
                if a != b:
                    return False, f"uniform-prior argmax changed: {a} vs {b}"
        return True, f"{n_cases} cases, max |dscore|={worst:.1e}; uniform-prior argmax invariant"

    return _timed("decoder_oracle", run)


def check_frame_prior() -> CheckResult:
    def run():
        g1 = PosteriorGrid.from_probs([[0.5, 0.3, 0.2], [0.1, 0.6, 0.3]])
        world = World(Vocabulary(("a", "b")), [g1], np.ones(1))
        prior = estimate_frame_prior([TrainingPair(0, (0, 1), (1, 2))], world)
        ok1 = np.allclose(prior.probs, [0.3, 0.45, 0.25], atol=1e-12)
        uni = unigram_from_prior(FramePrior(np.array([0.3, 0.45, 0.25])))
        probs = uni.probs(())
        ok2 = np.allclose(probs, [0.4, 0.6, 0.0], atol=1e-12)
        return ok1 and ok2, f"prior={np.round(prior.probs, 12).tolist()}, unigram={np.round(probs[:2], 12).tolist()}"

    return _timed("frame_prior", run)


ALL_CHECKS = {
    "ctc_oracle": check_ctc_oracle,
    "posterior_rows": check_posterior_rows,
    "exact_optimum": check_exact_optimum,
    "smoothing_identity": check_smoothing_identity,
    "gradients": check_gradients,
    "smoothing_reduction": check_smoothing_reduction,
    "decoder_oracle": check_decoder_oracle,
    "frame_prior": check_frame_prior,
}


def run_all(names=None) -> list[CheckResult]:
    return [ALL_CHECKS[n]() for n in (names or ALL_CHECKS)]
