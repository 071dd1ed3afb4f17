"""Internal LM estimators for CTC and their exact counterparts.

Every training criterion here is, for a tabular softmax student, a sum over
visited contexts of ``mass * logsumexp(z) - target . z`` plus a constant, so
each loss is assembled as :class:`RowTargets` and evaluated in one place.
Batch weights generalise the 1/N normalisation: a pair with weight w counts
as w/W of the batch, W being the batch's total weight.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import kernels
from .ctc import FORMAT_VERSION, NEG_INF, PosteriorGrid, Vocabulary, ctc_log_prob, posterior_rows, prefix_scores
from .data import TrainingPair, World, validate_pairs
from .errors import DeadPrefixError, InputDomainError, TrainingDivergedError
from .lm import FULL, CtxLM, log_softmax, perplexity  # noqa: F401  (re-exported)
from .seeding import stream
from .worldgen import joint_pairs

CRITERIA = ("label", "label_smoothed", "label_masked", "seq", "ce")
MODES = ("sampled", "exact_expectation")
MASK_POLICIES = ("uniform", "blank", "prior")
DEFAULT_ALPHA = 0.5
DEFAULT_P_MASK = 0.4


# ---------------------------------------------------------------------------
# frame-level prior and unigram


@dataclass
class FramePrior:
    probs: np.ndarray

    def __post_init__(self):
        self.probs = np.asarray(self.probs, dtype=np.float64)
        if np.any(self.probs < 0) or abs(self.probs.sum() - 1.0) > 1e-9:
            raise InputDomainError("frame prior must be a probability vector")

    @property
    def n_labels(self) -> int:
        return self.probs.shape[0] - 1


def estimate_frame_prior(dataset: Sequence[TrainingPair], world: World) -> FramePrior:
    """Weighted average of all frame posteriors in the dataset."""
    if not dataset:
        raise InputDomainError("cannot estimate a frame prior from an empty dataset")
    validate_pairs(dataset, world)
    acc = np.zeros(world.vocab.size + 1)
    n_frames = 0.0
    for p in dataset:
        grid = world.grids[p.grid_id]
        acc += p.weight * grid.probs().sum(axis=0)
        n_frames += p.weight * grid.n_frames
    if n_frames <= 0:
        raise InputDomainError("dataset has zero total weight")
    probs = acc / n_frames
    return FramePrior(probs / probs.sum())


def prior_to_json(prior: FramePrior, vocab: Vocabulary) -> dict:
    return {"version": FORMAT_VERSION, "vocab": list(vocab.labels), "probs": prior.probs.tolist()}


def prior_from_json(obj: dict) -> tuple[FramePrior, Vocabulary]:
    try:
        vocab = Vocabulary(tuple(obj["vocab"]))
        prior = FramePrior(np.asarray(obj["probs"], dtype=np.float64))
    except (KeyError, TypeError, ValueError) as exc:
        raise InputDomainError(f"malformed frame prior: {exc}") from None
    if prior.n_labels != vocab.size:
        raise InputDomainError("frame prior width does not match its vocabulary")
    return prior, vocab


def save_prior(path, prior: FramePrior, vocab: Vocabulary):
    Path(path).write_text(json.dumps(prior_to_json(prior, vocab)))


def load_prior(path) -> tuple[FramePrior, Vocabulary]:
    return prior_from_json(json.loads(Path(path).read_text()))


def unigram_from_prior(prior: FramePrior) -> CtxLM:
    """Order-0 model from the frame prior with blank removed and renormalised.

    The result predicts no EOS (``has_eos=False``): decoders skip its EOS factor.
    """
    labels = prior.probs[:-1]
    total = labels.sum()
    if total <= 0:
        raise InputDomainError("frame prior has no mass on non-blank labels")
    with np.errstate(divide="ignore"):
        row = np.append(np.log(labels / total), -np.inf)
    return CtxLM(prior.n_labels, 0, {(): row}, has_eos=False)


# ---------------------------------------------------------------------------
# smoothing weights


def beta_matrix(n: int, alpha: float, weights: Sequence[float] | None = None) -> np.ndarray:
    """beta[n, n'] = alpha * delta(n, n') + (1 - alpha) * w_n' / W.

    With unit weights this is ``delta * alpha + (1 - alpha) / N``.
    """
    if not 0.0 <= alpha <= 1.0:
        raise InputDomainError("alpha must lie in [0, 1]")
    if weights is None:
        marginal = np.full(n, 1.0 / n)
    else:
        w = np.asarray(weights, dtype=np.float64)
        marginal = w / w.sum()
    return alpha * np.eye(n) + (1.0 - alpha) * marginal[None, :]


# ---------------------------------------------------------------------------
# aggregated per-context targets


class RowTargets:
    """Per-context accumulation of (mass, target vector, constant).

    Terms are buffered and reduced in insertion order by :meth:`arrays`.
    """

    def __init__(self, width: int):
        self.width = width
        self.index: dict[tuple[int, ...], int] = {}
        self.contexts: list[tuple[int, ...]] = []
        self._row_idx: list[np.ndarray] = []
        self._row_w: list[np.ndarray] = []
        self._rows: list[np.ndarray] = []
        self._hot: list[tuple[int, float, int, float]] = []
        self._reduced = None

    def slot(self, ctx) -> int:
        i = self.index.get(ctx)
        if i is None:
            i = len(self.contexts)
            self.index[ctx] = i
            self.contexts.append(ctx)
        return i

    def add_rows(self, slots, weight: float, rows: np.ndarray):
        """weight * KL(row || q_ctx) for each (slot, row)."""
        self._row_idx.append(np.asarray(slots, dtype=np.int64))
        self._row_w.append(np.full(len(slots), float(weight)))
        self._rows.append(rows)
        self._reduced = None

    def add_row(self, ctx, weight: float, row: np.ndarray):
        self.add_rows([self.slot(ctx)], weight, np.asarray(row, dtype=np.float64)[None, :])

    def add_onehot(self, ctx, weight: float, symbol: int, const: float = 0.0):
        """-weight * log q(symbol | ctx), plus a constant."""
        self._hot.append((self.slot(ctx), float(weight), int(symbol), float(const)))
        self._reduced = None

    def __len__(self):
        return len(self.contexts)

    def arrays(self):
        if self._reduced is not None:
            return self._reduced
        n = len(self.contexts)
        mass = np.zeros(n)
        target = np.zeros((n, self.width))
        const = np.zeros(n)
        if self._rows:
            idx = np.concatenate(self._row_idx)
            w = np.concatenate(self._row_w)
            rows = np.concatenate(self._rows)
            with np.errstate(divide="ignore", invalid="ignore"):
                plogp = np.where(rows > 0, rows * np.log(rows), 0.0).sum(axis=1)
            np.add.at(mass, idx, w * rows.sum(axis=1))
            np.add.at(target, idx, w[:, None] * rows)
            np.add.at(const, idx, w * plogp)
        for i, w, a, c in self._hot:
            mass[i] += w
            target[i, a] += w
            const[i] += c
        self._reduced = (mass, target, const)
        return self._reduced

    def gather_logits(self, student: CtxLM) -> np.ndarray:
        if not self.contexts:
            return np.zeros((0, self.width))
        return np.ascontiguousarray(np.array([student.logit_row(c) for c in self.contexts], dtype=np.float64))

    def scatter_logits(self, student: CtxLM, logits: np.ndarray):
        for ctx, row in zip(self.contexts, logits):
            student.logits[ctx] = row.copy()

    def evaluate(self, student: CtxLM) -> tuple[float, dict]:
        mass, target, const = self.arrays()
        z = self.gather_logits(student)
        loss = dense_loss(z, mass, target, const)
        grad = mass[:, None] * np.exp(log_softmax(z)) - target if len(self) else np.zeros((0, self.width))
        return loss, {ctx: grad[i] for i, ctx in enumerate(self.contexts)}


def dense_loss(z, mass, target, const) -> float:
    if z.shape[0] == 0:
        return 0.0
    logq = log_softmax(z)
    with np.errstate(invalid="ignore"):
        cross = np.where(target > 0, target * logq, 0.0)
    return float(np.sum(const - cross.sum(axis=1)))


# ---------------------------------------------------------------------------
# teacher posteriors


class TeacherCache:
    """Memoises posterior rows per (grid key, label sequence). Teachers are fixed."""

    def __init__(self):
        self._rows: dict = {}
        self._seq: dict = {}

    def rows(self, grid: PosteriorGrid, key, seq: tuple[int, ...]) -> np.ndarray:
        k = (key, seq)
        r = self._rows.get(k)
        if r is None:
            r = posterior_rows(grid, seq)
            self._rows[k] = r
        return r

    def seq_log_prob(self, grid: PosteriorGrid, key, seq: tuple[int, ...]) -> float:
        k = (key, seq)
        v = self._seq.get(k)
        if v is None:
            v = ctc_log_prob(grid, seq)
            self._seq[k] = v
        return v


def _normalised_weights(batch: Sequence[TrainingPair]) -> np.ndarray:
    if not batch:
        raise InputDomainError("empty batch")
    w = np.array([p.weight for p in batch], dtype=np.float64)
    total = w.sum()
    if total <= 0:
        raise InputDomainError("batch has zero total weight")
    return w / total


def _contexts(student: CtxLM, seq, memo: dict) -> list:
    ctxs = memo.get(seq)
    if ctxs is None:
        ctxs = memo[seq] = [student.context(seq[:s]) for s in range(len(seq) + 1)]
    return ctxs


def _add_label_terms(targets: RowTargets, student: CtxLM, seq, rows, weight, memo, positions=None) -> bool:
    """Add KL terms along ``seq``; returns False if a needed row is dead."""
    ctxs = _contexts(student, seq, memo)
    pos = list(range(len(seq) + 1)) if positions is None else list(positions)
    if not pos:
        return True
    block = rows[pos]
    if np.isnan(block[:, 0]).any():
        return False
    targets.add_rows([targets.slot(ctxs[s]) for s in pos], weight, block)
    return True


def label_targets(student: CtxLM, batch, world: World, cache: TeacherCache | None = None) -> RowTargets:
    cache = cache or TeacherCache()
    w = _normalised_weights(batch)
    targets = RowTargets(student.width)
    memo: dict = {}
    for i, p in enumerate(batch):
        rows = cache.rows(world.grids[p.grid_id], p.grid_id, p.labels)
        if np.isnan(rows).any():
            raise DeadPrefixError(f"pair {i} (grid {p.grid_id}, labels {p.labels}) has a zero-mass prefix")
        _add_label_terms(targets, student, p.labels, rows, w[i], memo)
    return targets


def smoothed_targets(student: CtxLM, batch, world: World, alpha: float, cache: TeacherCache | None = None) -> RowTargets:
    cache = cache or TeacherCache()
    w = _normalised_weights(batch)
    beta = beta_matrix(len(batch), alpha, [p.weight for p in batch])
    targets = RowTargets(student.width)
    memo: dict = {}
    for n, p in enumerate(batch):
        for m, q in enumerate(batch):
            weight = w[n] * beta[n, m]
            if weight == 0.0:
                continue
            rows = cache.rows(world.grids[q.grid_id], q.grid_id, p.labels)
            dead = np.isnan(rows[:, 0])
            if n == m and dead.any():
                raise DeadPrefixError(f"pair {n} (grid {p.grid_id}, labels {p.labels}) has a zero-mass prefix")
            # rows past a dead cross-prefix carry no mass
            live = np.flatnonzero(~dead) if dead.any() else None
            _add_label_terms(targets, student, p.labels, rows, weight, memo, live)
    return targets


def mask_grid(grid: PosteriorGrid, boundaries, positions, policy: str = "uniform", prior: FramePrior | None = None) -> PosteriorGrid:
    """Replace the frames of each masked label position (1-based) per ``policy``."""
    lp = grid.log_probs.copy()
    width = lp.shape[1]
    if policy == "uniform":
        fill = np.full(width, -math.log(width))
    elif policy == "blank":
        fill = np.full(width, NEG_INF)
        fill[-1] = 0.0
    elif policy == "prior":
        if prior is None:
            raise InputDomainError("mask policy 'prior' needs a frame prior")
        with np.errstate(divide="ignore"):
            fill = np.log(prior.probs)
    else:
        raise InputDomainError(f"unknown mask policy {policy!r}")
    for s in positions:
        start = boundaries[s - 2] if s >= 2 else 0
        lp[start : boundaries[s - 1]] = fill
    return PosteriorGrid(lp, validate=False)


def sample_mask(n_labels: int, p_mask: float, rng: np.random.Generator) -> tuple[int, ...]:
    draws = rng.random(n_labels)
    return tuple(int(s) + 1 for s in np.flatnonzero(draws < p_mask))


def masked_targets(
    student: CtxLM,
    batch,
    world: World,
    p_mask: float,
    policy: str,
    rng: np.random.Generator,
    prior: FramePrior | None = None,
    cache: TeacherCache | None = None,
) -> RowTargets:
    if not 0.0 <= p_mask <= 1.0:
        raise InputDomainError("p_mask must lie in [0, 1]")
    cache = cache or TeacherCache()
    w = _normalised_weights(batch)
    targets = RowTargets(student.width)
    memo: dict = {}
    for i, p in enumerate(batch):
        if p.boundaries is None:
            raise InputDomainError(f"pair {i} has no label boundaries; masking needs them")
        positions = sample_mask(len(p.labels), p_mask, rng)
        if not positions:
            continue
        grid = mask_grid(world.grids[p.grid_id], p.boundaries, positions, policy, prior)
        rows = cache.rows(grid, (p.grid_id, p.boundaries, positions, policy), p.labels)
        if not _add_label_terms(targets, student, p.labels, rows, w[i], memo, [s - 1 for s in positions]):
            raise DeadPrefixError(f"pair {i}: masked grid leaves a zero-mass prefix")
    return targets


def seq_targets(student: CtxLM, batch, world: World, alpha: float, cache: TeacherCache | None = None) -> RowTargets:
    cache = cache or TeacherCache()
    w = _normalised_weights(batch)
    beta = beta_matrix(len(batch), alpha, [p.weight for p in batch])
    targets = RowTargets(student.width)
    for n, p in enumerate(batch):
        steps = p.labels + (student.eos,)
        for m, q in enumerate(batch):
            weight = w[n] * beta[n, m]
            if weight == 0.0:
                continue
            lp = cache.seq_log_prob(world.grids[q.grid_id], q.grid_id, p.labels)
            if lp == NEG_INF:
                if n == m:
                    raise DeadPrefixError(f"pair {n} has zero probability on its own grid")
                continue
            mass = weight * math.exp(lp)
            for s, a in enumerate(steps):
                targets.add_onehot(student.context(p.labels[:s]), mass, a, mass * lp if s == 0 else 0.0)
    return targets


def ce_targets(student: CtxLM, batch) -> RowTargets:
    w = _normalised_weights(batch)
    targets = RowTargets(student.width)
    for i, p in enumerate(batch):
        for s, a in enumerate(p.labels + (student.eos,)):
            targets.add_onehot(student.context(p.labels[:s]), w[i], a)
    return targets


def kd_label_loss(student, batch, world, cache=None):
    return label_targets(student, batch, world, cache).evaluate(student)


def kd_label_loss_smoothed(student, batch, world, alpha=DEFAULT_ALPHA, cache=None):
    return smoothed_targets(student, batch, world, alpha, cache).evaluate(student)


def kd_label_loss_masked(student, batch, world, p_mask=DEFAULT_P_MASK, policy="uniform", rng=None, prior=None, cache=None):
    rng = np.random.default_rng(0) if rng is None else rng
    return masked_targets(student, batch, world, p_mask, policy, rng, prior, cache).evaluate(student)


def kd_seq_loss(student, batch, world, alpha=DEFAULT_ALPHA, cache=None):
    return seq_targets(student, batch, world, alpha, cache).evaluate(student)


def ce_transcription_loss(student, batch):
    return ce_targets(student, batch).evaluate(student)


# ---------------------------------------------------------------------------
# exact ILM


def exact_ilm_seq(world: World, seq) -> float:
    return math.fsum(float(p) * math.exp(ctc_log_prob(g, seq)) for g, p in zip(world.grids, world.priors))


def exact_ilm_posterior(world: World, prefix) -> np.ndarray:
    """Mixture of per-grid posterior rows weighted by Pr(X_k | prefix)."""
    prefix = tuple(int(a) for a in prefix)
    log_w = []
    rows = []
    for g, p in zip(world.grids, world.priors):
        pref, ext, full = prefix_scores(g, prefix)
        if p <= 0 or pref[-1] == NEG_INF:
            continue
        log_w.append(math.log(p) + pref[-1])
        rows.append(np.append(np.exp(ext[-1] - pref[-1]), math.exp(full[-1] - pref[-1])))
    if not rows:
        raise DeadPrefixError(f"prefix {prefix} has zero mass in every grid")
    log_w = np.array(log_w)
    post = np.exp(log_w - np.logaddexp.reduce(log_w))
    return post @ np.array(rows)


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainConfig:
    criterion: str = "label"
    mode: str = "sampled"
    step_size: float = 1.0
    epochs: int = 20
    batch_size: int = 16
    seed: int = 0
    alpha: float = DEFAULT_ALPHA
    p_mask: float = DEFAULT_P_MASK
    mask_policy: str = "uniform"
    snapshot_every: int = 0
    # exact mode: gradient steps between loss-trace entries
    trace_every: int = 1
    # "mass" divides each context's step by its accumulated mass (a fixed
    # diagonal preconditioner; same fixed point, no sublinear tail on rare contexts)
    precondition: str = "none"

    def validate(self):
        if self.criterion not in CRITERIA:
            raise InputDomainError(f"criterion must be one of {CRITERIA}")
        if self.mode not in MODES:
            raise InputDomainError(f"mode must be one of {MODES}")
        if self.mask_policy not in MASK_POLICIES:
            raise InputDomainError(f"mask policy must be one of {MASK_POLICIES}")
        if not 0 <= self.alpha <= 1 or not 0 <= self.p_mask <= 1:
            raise InputDomainError("alpha and p_mask must lie in [0, 1]")
        if self.precondition not in ("none", "mass"):
            raise InputDomainError("precondition must be 'none' or 'mass'")
        if self.step_size <= 0 or self.epochs < 0 or self.batch_size < 1 or self.trace_every < 1:
            raise InputDomainError("invalid optimiser settings")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainResult:
    student: CtxLM
    trace: list[float]
    snapshots: list[tuple[int, CtxLM]] = field(default_factory=list)


def build_targets(config: TrainConfig, student, batch, world, cache, mask_rng=None, prior=None) -> RowTargets:
    c = config.criterion
    if c == "label":
        return label_targets(student, batch, world, cache)
    if c == "label_smoothed":
        return smoothed_targets(student, batch, world, config.alpha, cache)
    if c == "label_masked":
        return masked_targets(student, batch, world, config.p_mask, config.mask_policy, mask_rng, prior, cache)
    if c == "seq":
        return seq_targets(student, batch, world, config.alpha, cache)
    return ce_targets(student, batch)


def _descent(z, mass, target, config: TrainConfig, n_steps: int):
    if config.precondition == "mass":
        live = mass > 0
        scale = np.where(live, mass, 1.0)
        kernels.softmax_descent(z, live.astype(np.float64), target / scale[:, None], config.step_size, n_steps)
    else:
        kernels.softmax_descent(z, mass, target, config.step_size, n_steps)


def _check_finite(loss, trace):
    if not math.isfinite(loss):
        raise TrainingDivergedError(f"loss became non-finite after {len(trace)} trace entries", list(trace))


def train(
    student: CtxLM,
    dataset: Sequence[TrainingPair] | None,
    world: World,
    config: TrainConfig,
    prior: FramePrior | None = None,
    on_epoch: Callable[[int, float], None] | None = None,
) -> TrainResult:
    """Fixed-step gradient descent on one criterion. The input student is not modified.

    ``exact_expectation`` ignores ``dataset`` and optimises over the fully
    enumerated joint support of ``world``; one epoch is one full-batch step.
    """
    config.validate()
    student = student.copy()
    cache = TeacherCache()
    trace: list[float] = []
    snapshots: list[tuple[int, CtxLM]] = []

    if config.mode == "exact_expectation":
        if config.criterion == "label_masked":
            raise InputDomainError("masking needs sampled alignments; use mode='sampled'")
        batch = joint_pairs(world)
        targets = build_targets(config, student, batch, world, cache)
        mass, target, const = targets.arrays()
        z = targets.gather_logits(student)
        trace.append(dense_loss(z, mass, target, const))
        done = 0
        while done < config.epochs:
            n = min(config.trace_every, config.epochs - done)
            if config.snapshot_every:
                n = min(n, config.snapshot_every - done % config.snapshot_every)
            _descent(z, mass, target, config, n)
            done += n
            loss = dense_loss(z, mass, target, const)
            trace.append(loss)
            _check_finite(loss, trace)
            if config.snapshot_every and done % config.snapshot_every == 0:
                targets.scatter_logits(student, z)
                snapshots.append((done, student.copy()))
            if on_epoch:
                on_epoch(done, loss)
        targets.scatter_logits(student, z)
        return TrainResult(student, trace, snapshots)

    if not dataset:
        raise InputDomainError("sampled training needs a non-empty dataset")
    validate_pairs(dataset, world)
    shuffle_rng = stream(config.seed, "shuffle")
    mask_rng = stream(config.seed, "mask")
    n = len(dataset)
    for epoch in range(1, config.epochs + 1):
        order = shuffle_rng.permutation(n)
        losses = []
        for start in range(0, n, config.batch_size):
            batch = [dataset[i] for i in order[start : start + config.batch_size]]
            targets = build_targets(config, student, batch, world, cache, mask_rng, prior)
            if not len(targets):
                losses.append(0.0)
                continue
            mass, target, const = targets.arrays()
            z = targets.gather_logits(student)
            losses.append(dense_loss(z, mass, target, const))
            _check_finite(losses[-1], trace + losses)
            _descent(z, mass, target, config, 1)
            targets.scatter_logits(student, z)
        loss = float(np.mean(losses))
        trace.append(loss)
        if config.snapshot_every and epoch % config.snapshot_every == 0:
            snapshots.append((epoch, student.copy()))
        if on_epoch:
            on_epoch(epoch, loss)
    return TrainResult(student, trace, snapshots)
