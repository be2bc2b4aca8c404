"""Reproducible Monte Carlo streams.

Every trial draws from its own counter-based generator keyed by
``(seed, trial)``, so results do not depend on how trials are split over
threads.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from typing import Callable, TypeVar

import numpy as np

T = TypeVar("T")

CHUNK = 2048


def trial_rng(seed: int, trial: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=int(seed), counter=[0, int(trial), 0, 0]))


def run_trials(fn: Callable[[int, np.random.Generator], T], trials: int, seed: int, workers: int = 1) -> list[T]:
    """Evaluate ``fn(trial, rng)`` for every trial, in trial order."""
    if trials < 1:
        raise ValueError("trials must be at least 1")

    def chunk(lo: int) -> list[T]:
        return [fn(t, trial_rng(seed, t)) for t in range(lo, min(lo + CHUNK, trials))]

    starts = range(0, trials, CHUNK)
    if workers and workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            parts = list(ex.map(chunk, starts))
    else:
        parts = [chunk(s) for s in starts]
    return [x for part in parts for x in part]


def pick(weights: np.ndarray, u: float) -> int:
    """Index chosen by inverse-CDF lookup of a uniform draw."""
    cdf = np.cumsum(weights)
    return int(min(np.searchsorted(cdf, u * cdf[-1], side="right"), len(weights) - 1))


def sample_branches(weights, trials: int, seed: int, workers: int = 1) -> np.ndarray:
    w = np.asarray(weights, dtype=float)
    if np.any(w < 0) or w.sum() <= 0:
        raise ValueError("branch weights must be non-negative with positive sum")
    return np.array(run_trials(lambda t, rng: pick(w, rng.random()), trials, seed, workers), dtype=int)
