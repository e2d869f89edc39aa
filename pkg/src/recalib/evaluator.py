"""Leave-one-out offline evaluation with the hit-in-top-k quality function."""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .core import EvalDistribution, Snapshot, conditional_matrix, sample_pairs
from .recommenders import DEFAULT_K, Recommendation, Recommender

DEFAULT_SAMPLES = 20000
RESULT_HEADER = ("day", "algorithm", "mode", "score", "n_pairs", "std_error", "seed")


@dataclass(frozen=True)
class EvalResult:
    score: float
    n_pairs: int
    mode: str
    seed: int | None = None
    std_error: float | None = None

    def to_row(self, day: int, algorithm: str) -> tuple:
        return (
            day,
            algorithm,
            self.mode,
            repr(self.score),
            self.n_pairs,
            "" if self.std_error is None else repr(self.std_error),
            "" if self.seed is None else self.seed,
        )


def write_results(path: str | os.PathLike, rows: Iterable[tuple[int, str, EvalResult]]) -> None:
    """Write ``(day, algorithm, result)`` triples as result CSV rows."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RESULT_HEADER)
        for day, algorithm, res in rows:
            w.writerow(res.to_row(day, algorithm))


def quality(rec: Recommendation, i: int) -> int:
    return int(i in rec.items)


def hit_matrix(g: Recommender, snapshot: Snapshot, k: int = DEFAULT_K) -> np.ndarray:
    """Boolean matrix aligned with ``snapshot.matrix``: leave-one-out hit per owned pair.

    The hits do not depend on the evaluation weights, so one matrix serves
    any number of reweighted evaluations of the same snapshot.
    """
    rows, cols = snapshot.pairs()
    out = np.zeros(snapshot.matrix.shape, dtype=bool)
    out[rows, cols] = g.hits(snapshot, rows, cols, k)
    return out


def evaluate_exact(
    g: Recommender,
    snapshot: Snapshot,
    dist: EvalDistribution | None = None,
    k: int = DEFAULT_K,
    hits: np.ndarray | None = None,
) -> EvalResult:
    """Full expectation of the hit indicator over ``P(u) P(i|u, w)``.

    Pass a precomputed ``hits`` matrix (see :func:`hit_matrix`) to skip
    running the recommender.
    """
    if snapshot.empty:
        raise ValueError("cannot evaluate on an empty snapshot")
    dist = dist or EvalDistribution()
    if hits is None:
        hits = hit_matrix(g, snapshot, k)
    cond = conditional_matrix(snapshot, dist.weight_vector(snapshot))
    per_user = (cond * hits).sum(axis=1)
    score = float(dist.user_vector(snapshot) @ per_user)
    return EvalResult(min(max(score, 0.0), 1.0), snapshot.n_pairs, "exact")


def evaluate_sampled(
    g: Recommender,
    snapshot: Snapshot,
    dist: EvalDistribution | None = None,
    k: int = DEFAULT_K,
    n: int = DEFAULT_SAMPLES,
    seed: int = 0,
    hits: np.ndarray | None = None,
) -> EvalResult:
    """Mean hit over ``n`` seeded draws of (user, item) pairs.

    Users are drawn from ``P(u)``, then one of their items from
    ``P(i|u, w)``. Only the distinct drawn pairs are sent to the recommender
    unless ``hits`` is given.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    dist = dist or EvalDistribution()
    rows, cols = sample_pairs(dist, snapshot, n, seed)
    if hits is None:
        flat = rows * snapshot.n_items + cols
        uniq, inverse = np.unique(flat, return_inverse=True)
        drawn = g.hits(snapshot, uniq // snapshot.n_items, uniq % snapshot.n_items, k)[inverse]
    else:
        drawn = hits[rows, cols]
    score = float(drawn.mean())
    return EvalResult(score, n, "sampled", seed, math.sqrt(score * (1.0 - score) / n))
