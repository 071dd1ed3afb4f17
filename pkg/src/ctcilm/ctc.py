"""Exact log-space CTC probabilities on posterior grids.

A grid row is a distribution over ``labels + [blank]``; the blank always sits
in the last column (index ``V``). Label sequences are tuples of label indices
in ``0..V-1``; the end-of-sequence symbol of the LM side also uses index ``V``
but never appears inside a sequence.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import kernels
from .errors import DeadPrefixError, EnumerationGuardError, InputDomainError

NEG_INF = float("-inf")
FORMAT_VERSION = 1

# refuse brute-force enumeration beyond this many alignments
MAX_ALIGNMENTS = 2_000_000


@dataclass(frozen=True)
class Vocabulary:
    labels: tuple[str, ...]

    def __post_init__(self):
        labels = tuple(str(x) for x in self.labels)
        object.__setattr__(self, "labels", labels)
        if not labels:
            raise InputDomainError("vocabulary must contain at least one label")
        if len(set(labels)) != len(labels):
            raise InputDomainError("vocabulary labels must be unique")
        if any(not x for x in labels):
            raise InputDomainError("vocabulary labels must be non-empty strings")
        if any(x in ("<blank>", "<eos>") for x in labels):
            raise InputDomainError("blank/EOS are implicit and cannot be listed as labels")

    @property
    def size(self) -> int:
        return len(self.labels)

    @property
    def blank_index(self) -> int:
        return len(self.labels)

    @property
    def eos_index(self) -> int:
        return len(self.labels)

    def encode(self, symbols: Sequence[str]) -> tuple[int, ...]:
        lookup = {x: i for i, x in enumerate(self.labels)}
        try:
            return tuple(lookup[x] for x in symbols)
        except KeyError as exc:
            raise InputDomainError(f"unknown label {exc.args[0]!r}") from None

    def decode(self, seq: Sequence[int]) -> list[str]:
        return [self.labels[i] for i in seq]

    @classmethod
    def of_size(cls, n: int) -> "Vocabulary":
        return cls(tuple(chr(ord("a") + i) if n <= 26 else f"l{i}" for i in range(n)))


class PosteriorGrid:
    """T x (V+1) per-frame posteriors, held as log-probabilities."""

    __slots__ = ("log_probs",)

    def __init__(self, log_probs, *, validate: bool = True):
        lp = np.array(log_probs, dtype=np.float64)
        if lp.ndim != 2 or lp.shape[0] < 1 or lp.shape[1] < 2:
            raise InputDomainError(f"grid must be T x (V+1) with T>=1, V>=1; got shape {lp.shape}")
        if validate:
            if np.any(np.isnan(lp)) or np.any(lp > 1e-12):
                raise InputDomainError("grid log-probabilities must be <= 0 and not NaN")
            sums = np.exp(lp).sum(axis=1)
            if np.any(np.abs(sums - 1.0) > 1e-9):
                raise InputDomainError(f"grid rows must sum to 1 (worst {sums.max():.12g}/{sums.min():.12g})")
        lp.setflags(write=False)
        self.log_probs = lp

    @classmethod
    def from_probs(cls, probs) -> "PosteriorGrid":
        p = np.asarray(probs, dtype=np.float64)
        if np.any(p < 0):
            raise InputDomainError("probabilities must be nonnegative")
        with np.errstate(divide="ignore"):
            return cls(np.log(p))

    @property
    def n_frames(self) -> int:
        return self.log_probs.shape[0]

    @property
    def n_labels(self) -> int:
        return self.log_probs.shape[1] - 1

    @property
    def blank(self) -> int:
        return self.n_labels

    def probs(self) -> np.ndarray:
        return np.exp(self.log_probs)

    def reversed(self) -> "PosteriorGrid":
        return PosteriorGrid(self.log_probs[::-1], validate=False)

    def __eq__(self, other):
        return isinstance(other, PosteriorGrid) and np.array_equal(self.log_probs, other.log_probs)

    def __repr__(self):
        return f"PosteriorGrid(T={self.n_frames}, V={self.n_labels})"


def _check_seq(seq, n_labels: int) -> tuple[int, ...]:
    seq = tuple(int(a) for a in seq)
    for a in seq:
        if not 0 <= a < n_labels:
            raise InputDomainError(f"label index {a} outside vocabulary of size {n_labels}")
    return seq


def collapse(alignment: Sequence[int], blank: int) -> tuple[int, ...]:
    """Merge repeats, then drop blanks."""
    out = []
    prev = None
    for y in alignment:
        y = int(y)
        if not 0 <= y <= blank:
            raise InputDomainError(f"alignment symbol {y} outside 0..{blank}")
        if y != prev and y != blank:
            out.append(y)
        prev = y
    return tuple(out)


def min_frames(seq: Sequence[int]) -> int:
    """Fewest frames any alignment of ``seq`` needs (one per label plus one per repeat)."""
    repeats = sum(1 for a, b in zip(seq, seq[1:]) if a == b)
    return len(seq) + repeats


def is_feasible(seq: Sequence[int], n_frames: int) -> bool:
    return min_frames(seq) <= n_frames


def ctc_log_prob(grid: PosteriorGrid, seq: Sequence[int]) -> float:
    seq = _check_seq(seq, grid.n_labels)
    if not is_feasible(seq, grid.n_frames):
        return NEG_INF
    return float(kernels.ctc_forward(grid.log_probs, np.array(seq, dtype=np.int64)))


def prefix_scores(grid: PosteriorGrid, seq: Sequence[int]):
    """Prefix masses at every position of ``seq``; see ``kernels.prefix_scores``."""
    seq = _check_seq(seq, grid.n_labels)
    return kernels.prefix_scores(grid.log_probs, np.array(seq, dtype=np.int64))


def prefix_log_prob(grid: PosteriorGrid, prefix: Sequence[int]) -> float:
    """log of the total mass of sequences starting with ``prefix``."""
    pref, _, _ = prefix_scores(grid, prefix)
    return float(pref[-1])


def posterior_rows(grid: PosteriorGrid, seq: Sequence[int]) -> np.ndarray:
    """Label posterior rows over V+ at every position 0..S of ``seq``.

    Row s is conditioned on ``seq[:s]``. Rows whose prefix has zero mass are NaN.
    """
    seq = _check_seq(seq, grid.n_labels)
    return kernels.posterior_rows(grid.log_probs, np.array(seq, dtype=np.int64))


def label_posterior_row(grid: PosteriorGrid, prefix: Sequence[int]) -> np.ndarray:
    rows = posterior_rows(grid, prefix)
    row = rows[-1]
    if np.isnan(row[0]):
        raise DeadPrefixError(f"prefix {tuple(prefix)} has zero mass on this grid")
    return row


def _guard(grid: PosteriorGrid, limit: int = MAX_ALIGNMENTS):
    if grid.n_frames * math.log(grid.n_labels + 1) > math.log(limit):
        raise EnumerationGuardError(
            f"(V+1)^T = {grid.n_labels + 1}^{grid.n_frames} alignments exceeds limit {limit}"
        )


def enumerate_alignments(grid: PosteriorGrid, limit: int = MAX_ALIGNMENTS):
    """Yield ``(alignment, log_prob)`` for every alignment of the grid."""
    _guard(grid, limit)
    lp = grid.log_probs
    symbols = range(grid.n_labels + 1)
    frames = range(grid.n_frames)
    for path in itertools.product(symbols, repeat=grid.n_frames):
        yield path, float(sum(lp[t, y] for t, y in zip(frames, path)))


def brute_force_seq_log_distribution(grid: PosteriorGrid, limit: int = MAX_ALIGNMENTS) -> dict:
    """Exact log-distribution over collapsed sequences by alignment enumeration."""
    out: dict[tuple[int, ...], float] = {}
    blank = grid.blank
    for path, lp in enumerate_alignments(grid, limit):
        seq = collapse(path, blank)
        out[seq] = float(np.logaddexp(out.get(seq, NEG_INF), lp))
    return out


def brute_force_seq_distribution(grid: PosteriorGrid, max_len: int | None = None, limit: int = MAX_ALIGNMENTS) -> dict:
    dist = {
        seq: math.exp(lp)
        for seq, lp in brute_force_seq_log_distribution(grid, limit).items()
        if max_len is None or len(seq) <= max_len
    }
    return dict(sorted(dist.items(), key=lambda kv: (len(kv[0]), kv[0])))


def grid_to_json(grid: PosteriorGrid, vocab: Vocabulary) -> dict:
    return {
        "version": FORMAT_VERSION,
        "vocab": list(vocab.labels),
        "log_space": True,
        "rows": grid.log_probs.tolist(),
    }


def grid_from_json(obj: dict) -> tuple[PosteriorGrid, Vocabulary]:
    try:
        vocab = Vocabulary(tuple(obj["vocab"]))
        rows = obj["rows"]
        log_space = bool(obj.get("log_space", True))
    except (KeyError, TypeError) as exc:
        raise InputDomainError(f"malformed grid object: {exc}") from None
    grid = PosteriorGrid(rows) if log_space else PosteriorGrid.from_probs(rows)
    if grid.n_labels != vocab.size:
        raise InputDomainError(f"grid has {grid.n_labels} labels, vocabulary has {vocab.size}")
    return grid, vocab


def load_grid(path) -> tuple[PosteriorGrid, Vocabulary]:
    return grid_from_json(json.loads(Path(path).read_text()))


def save_grid(path, grid: PosteriorGrid, vocab: Vocabulary):
    Path(path).write_text(json.dumps(grid_to_json(grid, vocab)))


def sequence_log_distribution(grid: PosteriorGrid, max_nodes: int = 200_000) -> dict:
    """All label sequences with nonzero mass and their log-probabilities.

    Walks the prefix tree, descending only into live prefixes, so the cost is
    proportional to the number of reachable prefixes rather than (V+1)^T.
    """
    out: dict[tuple[int, ...], float] = {}
    stack: list[tuple[int, ...]] = [()]
    visited = 0
    while stack:
        prefix = stack.pop()
        visited += 1
        if visited > max_nodes:
            raise EnumerationGuardError(f"more than {max_nodes} live prefixes")
        pref, ext, full = prefix_scores(grid, prefix)
        if full[-1] > NEG_INF:
            out[prefix] = float(full[-1])
        for c in range(grid.n_labels - 1, -1, -1):
            if ext[-1, c] > NEG_INF:
                stack.append(prefix + (c,))
    return dict(sorted(out.items(), key=lambda kv: (len(kv[0]), kv[0])))
