"""Shared data containers: worlds and training pairs, plus their file formats."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .ctc import PosteriorGrid, Vocabulary
from .errors import InputDomainError

FORMAT_VERSION = 1


@dataclass
class World:
    """Finite mixture of posterior grids; ``priors[k]`` is Pr(X_k)."""

    vocab: Vocabulary
    grids: list[PosteriorGrid]
    priors: np.ndarray
    max_len: int | None = None

    def __post_init__(self):
        self.priors = np.asarray(self.priors, dtype=np.float64)
        if len(self.grids) == 0 or len(self.grids) != len(self.priors):
            raise InputDomainError("world needs one prior per grid and at least one grid")
        if np.any(self.priors < 0) or abs(math.fsum(self.priors) - 1.0) > 1e-12:
            raise InputDomainError("grid priors must be nonnegative and sum to 1")
        for g in self.grids:
            if g.n_labels != self.vocab.size:
                raise InputDomainError("every grid must share the world vocabulary")
        if self.max_len is None:
            self.max_len = max(g.n_frames for g in self.grids)

    @property
    def n_grids(self) -> int:
        return len(self.grids)

    def __getitem__(self, k: int) -> PosteriorGrid:
        return self.grids[k]


@dataclass
class TrainingPair:
    grid_id: int
    labels: tuple[int, ...]
    boundaries: tuple[int, ...] | None = None
    weight: float = 1.0

    def __post_init__(self):
        self.labels = tuple(int(a) for a in self.labels)
        if self.boundaries is not None:
            self.boundaries = tuple(int(t) for t in self.boundaries)
            if len(self.boundaries) != len(self.labels):
                raise InputDomainError("boundaries must have one end frame per label")
            if any(b <= a for a, b in zip(self.boundaries, self.boundaries[1:])):
                raise InputDomainError("boundaries must be strictly increasing")
            if self.boundaries and self.boundaries[0] < 1:
                raise InputDomainError("boundaries are 1-based end frames")
        if not self.weight >= 0:
            raise InputDomainError("pair weight must be nonnegative")

    def to_json(self) -> dict:
        return {
            "grid_id": self.grid_id,
            "labels": list(self.labels),
            "boundaries": None if self.boundaries is None else list(self.boundaries),
            "weight": self.weight,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "TrainingPair":
        return cls(int(obj["grid_id"]), tuple(obj["labels"]), obj.get("boundaries"), float(obj.get("weight", 1.0)))


def validate_pairs(pairs: Sequence[TrainingPair], world: World):
    for i, p in enumerate(pairs):
        if not 0 <= p.grid_id < world.n_grids:
            raise InputDomainError(f"pair {i}: grid_id {p.grid_id} not in world")
        n_frames = world.grids[p.grid_id].n_frames
        if any(not 0 <= a < world.vocab.size for a in p.labels):
            raise InputDomainError(f"pair {i}: label outside vocabulary")
        if p.boundaries and p.boundaries[-1] > n_frames:
            raise InputDomainError(f"pair {i}: boundary beyond T={n_frames}")


def world_to_json(world: World) -> dict:
    return {
        "version": FORMAT_VERSION,
        "vocab": list(world.vocab.labels),
        "log_space": True,
        "grids": [{"prior": float(p), "rows": g.log_probs.tolist()} for g, p in zip(world.grids, world.priors)],
        "max_len": world.max_len,
    }


def world_from_json(obj: dict) -> World:
    try:
        vocab = Vocabulary(tuple(obj["vocab"]))
        log_space = bool(obj.get("log_space", True))
        grids = [
            PosteriorGrid(g["rows"]) if log_space else PosteriorGrid.from_probs(g["rows"]) for g in obj["grids"]
        ]
        priors = [float(g["prior"]) for g in obj["grids"]]
        return World(vocab, grids, np.array(priors), obj.get("max_len"))
    except (KeyError, TypeError) as exc:
        raise InputDomainError(f"malformed world object: {exc}") from None


def save_world(path, world: World):
    Path(path).write_text(json.dumps(world_to_json(world)))


def load_world(path) -> World:
    return world_from_json(json.loads(Path(path).read_text()))


def save_dataset(path, pairs: Sequence[TrainingPair]):
    Path(path).write_text("".join(json.dumps(p.to_json()) + "\n" for p in pairs))


def load_dataset(path) -> list[TrainingPair]:
    pairs = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        if not line.strip():
            continue
        try:
            pairs.append(TrainingPair.from_json(json.loads(line)))
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise InputDomainError(f"{path}:{lineno}: malformed training pair ({exc})") from None
    return pairs
