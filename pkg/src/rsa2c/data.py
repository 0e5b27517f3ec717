"""Transition containers shared by the critics and the trainer."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, NamedTuple

import numpy as np


class TransitionSample(NamedTuple):
    state: np.ndarray
    action: np.ndarray
    reward: float
    next_state: np.ndarray
    restarted: bool = False


@dataclass
class Batch:
    """Column-stacked transitions. ``next_states`` are true successors, also for
    restarted steps, so bootstrapping never crosses a reset."""

    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    restarted: np.ndarray

    def __len__(self) -> int:
        return self.states.shape[0]

    @classmethod
    def from_samples(cls, samples: Iterable[TransitionSample]) -> "Batch":
        rows = list(samples)
        if not rows:
            raise ValueError("empty batch")
        return cls(
            np.array([np.atleast_1d(r.state) for r in rows], dtype=float),
            np.array([np.atleast_1d(r.action) for r in rows], dtype=float),
            np.array([float(r.reward) for r in rows]),
            np.array([np.atleast_1d(r.next_state) for r in rows], dtype=float),
            np.array([bool(r.restarted) for r in rows]),
        )


def as_batch(batch) -> Batch:
    return batch if isinstance(batch, Batch) else Batch.from_samples(batch)
