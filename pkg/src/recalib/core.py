"""Interaction logs, point-in-time snapshots and evaluation distributions.

Identifiers are plain integers. Inside a :class:`Snapshot` users and items are
stored in ascending id order, so the dense row/column index of an item orders
exactly like its id; every tie-break downstream relies on this.
"""

from __future__ import annotations

import csv
import io
import os
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

LOG_HEADER = ("user_id", "item_id", "day")


class LogFormatError(ValueError):
    """Malformed interaction-log input."""


class InteractionLog:
    """Append-only set of ``(user, item, day)`` adoption events.

    An item is adopted once per user: re-ingesting a known pair keeps the
    earliest day.
    """

    def __init__(self, events: Iterable[tuple[int, int, int]] = ()):
        self._first: dict[tuple[int, int], int] = {}
        self.extend(events)

    def add(self, user: int, item: int, day: int) -> None:
        user, item, day = int(user), int(item), int(day)
        if day < 0:
            raise ValueError(f"negative day {day} for ({user}, {item})")
        key = (user, item)
        prev = self._first.get(key)
        if prev is None or day < prev:
            self._first[key] = day

    def extend(self, events: Iterable[tuple[int, int, int]]) -> None:
        for user, item, day in events:
            self.add(user, item, day)

    def __len__(self) -> int:
        return len(self._first)

    def events(self) -> list[tuple[int, int, int]]:
        """Events in canonical ``(day, user, item)`` order."""
        rows = [(u, i, d) for (u, i), d in self._first.items()]
        rows.sort(key=lambda e: (e[2], e[0], e[1]))
        return rows

    @property
    def first_day(self) -> int | None:
        return min(self._first.values()) if self._first else None

    @property
    def last_day(self) -> int | None:
        return max(self._first.values()) if self._first else None

    def arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        ev = self.events()
        if not ev:
            empty = np.zeros(0, dtype=np.int64)
            return empty, empty.copy(), empty.copy()
        a = np.asarray(ev, dtype=np.int64)
        return a[:, 0], a[:, 1], a[:, 2]

    @classmethod
    def read_csv(cls, path: str | os.PathLike) -> "InteractionLog":
        with open(path, newline="", encoding="utf-8") as fh:
            return cls.parse(fh)

    @classmethod
    def parse(cls, stream: io.TextIOBase | Iterable[str]) -> "InteractionLog":
        """Parse ``user_id,item_id,day`` CSV text, rejecting malformed lines."""
        reader = csv.reader(stream)
        log = cls()
        header = next(reader, None)
        if header is None:
            raise LogFormatError("line 1: empty file, expected header user_id,item_id,day")
        if tuple(h.strip() for h in header) != LOG_HEADER:
            raise LogFormatError(f"line 1: bad header {header!r}, expected user_id,item_id,day")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise LogFormatError(f"line {lineno}: expected 3 fields, got {len(row)}")
            try:
                user, item, day = (int(x) for x in row)
            except ValueError:
                raise LogFormatError(f"line {lineno}: non-integer field in {row!r}") from None
            if day < 0:
                raise LogFormatError(f"line {lineno}: negative day {day}")
            log.add(user, item, day)
        return log

    def write_csv(self, path: str | os.PathLike) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(LOG_HEADER)
            for u, i, d in self.events():
                w.writerow((u, i, d))


@dataclass(frozen=True, eq=False)
class Snapshot:
    """Immutable user/item incidence view of a log at a given day.

    Only users owning at least one item appear. ``matrix[r, c]`` is 1.0 iff
    user ``user_ids[r]`` owns item ``item_ids[c]``.
    """

    day: int
    user_ids: np.ndarray
    item_ids: np.ndarray
    matrix: np.ndarray
    user_items: Mapping[int, tuple[int, ...]] = field(repr=False)
    item_users: Mapping[int, tuple[int, ...]] = field(repr=False)

    @property
    def n_users(self) -> int:
        return len(self.user_ids)

    @property
    def n_items(self) -> int:
        return len(self.item_ids)

    @property
    def n_pairs(self) -> int:
        return int(self.matrix.sum())

    @property
    def empty(self) -> bool:
        return self.n_users == 0

    def user_index(self, user: int) -> int:
        pos = int(np.searchsorted(self.user_ids, user))
        if pos >= self.n_users or self.user_ids[pos] != user:
            raise KeyError(f"user {user} not in snapshot at day {self.day}")
        return pos

    def item_index(self, item: int) -> int:
        pos = int(np.searchsorted(self.item_ids, item))
        if pos >= self.n_items or self.item_ids[pos] != item:
            raise KeyError(f"item {item} not in snapshot at day {self.day}")
        return pos

    def has_item(self, item: int) -> bool:
        return item in self.item_users

    def pairs(self) -> tuple[np.ndarray, np.ndarray]:
        """Row/column indices of owned pairs, row-major."""
        return np.nonzero(self.matrix)

    @classmethod
    def from_pairs(cls, day: int, users: np.ndarray, items: np.ndarray) -> "Snapshot":
        users = np.asarray(users, dtype=np.int64)
        items = np.asarray(items, dtype=np.int64)
        user_ids = np.unique(users)
        item_ids = np.unique(items)
        mat = np.zeros((len(user_ids), len(item_ids)))
        mat[np.searchsorted(user_ids, users), np.searchsorted(item_ids, items)] = 1.0
        mat.setflags(write=False)
        user_items = {
            int(u): tuple(int(x) for x in item_ids[row > 0]) for u, row in zip(user_ids, mat)
        }
        item_users = {
            int(i): tuple(int(x) for x in user_ids[col > 0]) for i, col in zip(item_ids, mat.T)
        }
        return cls(int(day), user_ids, item_ids, mat, user_items, item_users)


def snapshot_at(log: InteractionLog, day: int) -> Snapshot:
    """Events of ``log`` with ``event.day <= day``."""
    if day < 0:
        raise ValueError(f"day must be >= 0, got {day}")
    users, items, days = log.arrays()
    keep = days <= day
    return Snapshot.from_pairs(day, users[keep], items[keep])


@dataclass(frozen=True)
class EvalDistribution:
    """Sampling distribution of evaluation pairs.

    ``user_prob`` of ``None`` means uniform over the snapshot's users. The
    base conditional ``P(i|u)`` is uniform over the user's items; ``weights``
    multiplies it per item (missing items weigh 1.0).
    """

    user_prob: Mapping[int, float] | None = None
    weights: Mapping[int, float] | None = None

    def __post_init__(self):
        if self.weights is not None:
            bad = {i: w for i, w in self.weights.items() if not (w > 0 and np.isfinite(w))}
            if bad:
                raise ValueError(f"weights must be positive and finite: {bad}")

    def with_weights(self, weights: Mapping[int, float] | None) -> "EvalDistribution":
        return EvalDistribution(self.user_prob, weights)

    def user_vector(self, snap: Snapshot) -> np.ndarray:
        if self.user_prob is None:
            n = snap.n_users
            return np.full(n, 1.0 / n) if n else np.zeros(0)
        pu = np.array([self.user_prob.get(int(u), 0.0) for u in snap.user_ids], dtype=float)
        if np.any(pu <= 0):
            missing = [int(u) for u, p in zip(snap.user_ids, pu) if p <= 0]
            raise ValueError(f"user_prob must be > 0 for every snapshot user, not for {missing[:5]}")
        if abs(pu.sum() - 1.0) > 1e-9:
            raise ValueError(f"user_prob sums to {pu.sum()!r} over snapshot users, expected 1")
        return pu

    def weight_vector(self, snap: Snapshot) -> np.ndarray:
        if self.weights is None:
            return np.ones(snap.n_items)
        return np.array([self.weights.get(int(i), 1.0) for i in snap.item_ids], dtype=float)


def conditional_matrix(snap: Snapshot, weights: np.ndarray) -> np.ndarray:
    """Row-stochastic matrix of ``P(i|u, w)`` aligned with ``snap.matrix``."""
    num = snap.matrix * weights
    return num / num.sum(axis=1, keepdims=True)


def marginal_vector(snap: Snapshot, user_prob: np.ndarray, weights: np.ndarray) -> np.ndarray:
    return user_prob @ conditional_matrix(snap, weights)


def weighted_conditional(dist: EvalDistribution, snap: Snapshot, u: int, i: int) -> float:
    """``P(i|u, w)``; zero when ``u`` does not own ``i``."""
    items = snap.user_items.get(u)
    if items is None:
        raise KeyError(f"user {u} not in snapshot at day {snap.day}")
    w = dist.weights or {}
    ws = np.array([w.get(j, 1.0) for j in items], dtype=float)
    if np.any(ws <= 0):
        raise ValueError(f"nonpositive weight among items of user {u}")
    if i not in items:
        return 0.0
    # uniform base conditional cancels in the ratio
    return float(w.get(i, 1.0) / ws.sum())


def item_marginal(dist: EvalDistribution, snap: Snapshot) -> dict[int, float]:
    """``P(i|w) = sum_u P(i|u, w) P(u)`` for every item of the snapshot."""
    if snap.empty:
        return {}
    q = marginal_vector(snap, dist.user_vector(snap), dist.weight_vector(snap))
    return {int(i): float(p) for i, p in zip(snap.item_ids, q)}


def sample_pairs(
    dist: EvalDistribution,
    snap: Snapshot,
    n: int,
    rng: np.random.Generator | int,
) -> tuple[np.ndarray, np.ndarray]:
    """Draw ``n`` (user row, item column) index pairs from ``P(u) P(i|u, w)``.

    Users are drawn first, then one item per draw by inverting the user's
    weighted conditional CDF.
    """
    if snap.empty:
        raise ValueError("cannot sample from an empty snapshot")
    rng = np.random.default_rng(rng)
    pu = dist.user_vector(snap)
    rows = rng.choice(snap.n_users, size=n, p=pu)
    cdf = np.cumsum(conditional_matrix(snap, dist.weight_vector(snap)), axis=1)
    r = rng.random(n) * cdf[rows, -1]
    cols = (cdf[rows] <= r[:, None]).sum(axis=1)
    np.minimum(cols, snap.n_items - 1, out=cols)
    # roundoff at the top of the CDF can land on a trailing unowned item
    for k in np.nonzero(snap.matrix[rows, cols] == 0)[0]:
        cols[k] = np.nonzero(snap.matrix[rows[k]])[0][-1]
    return rows, cols


def sample_pair(dist: EvalDistribution, snap: Snapshot, rng_seed: int) -> tuple[int, int]:
    """One ``(user_id, item_id)`` pair, reproducible for a given seed."""
    rows, cols = sample_pairs(dist, snap, 1, rng_seed)
    return int(snap.user_ids[rows[0]]), int(snap.item_ids[cols[0]])
