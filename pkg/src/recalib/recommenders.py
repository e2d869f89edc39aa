"""Top-k recommenders: constant list, cosine-style CF and naive co-occurrence CF.

Every recommender ranks candidates by score descending, then item id
ascending; zero-score items therefore fill empty slots in id order. Scores
closer than ``1e-10`` are compared as equal so that batched and single-query
code paths break ties identically.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .core import Snapshot

DEFAULT_K = 5
TIE_DECIMALS = 10


@dataclass(frozen=True)
class Recommendation:
    items: tuple[int, ...]
    scores: tuple[float, ...]

    def __len__(self) -> int:
        return len(self.items)

    def __contains__(self, item) -> bool:
        return item in self.items


def profile_without(snapshot: Snapshot, u: int, i: int) -> frozenset[int]:
    """Profile of ``u`` with item ``i`` removed (the leave-one-out query)."""
    items = snapshot.user_items.get(u)
    if items is None:
        raise KeyError(f"user {u} not in snapshot at day {snapshot.day}")
    if i not in items:
        raise KeyError(f"item {i} not in profile of user {u}")
    return frozenset(items) - {i}


def _rank_key(scores: np.ndarray) -> np.ndarray:
    return np.round(scores, TIE_DECIMALS)


def top_k(
    scores: Mapping[int, float],
    exclude: Iterable[int] = (),
    k: int = DEFAULT_K,
    items: Iterable[int] | None = None,
) -> Recommendation:
    """The ``k`` best items of ``scores`` outside ``exclude``.

    ``items`` is the candidate universe; items missing from ``scores`` score
    zero. Without it the universe is the keys of ``scores``.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    exclude = set(exclude)
    universe = set(scores) if items is None else set(items) | set(scores)
    cand = np.array(sorted(universe - exclude), dtype=np.int64)
    if len(cand) == 0:
        return Recommendation((), ())
    vals = np.array([scores.get(int(c), 0.0) for c in cand], dtype=float)
    order = np.lexsort((cand, -_rank_key(vals)))[:k]
    return Recommendation(tuple(int(c) for c in cand[order]), tuple(float(v) for v in vals[order]))


def _profile_vector(snapshot: Snapshot, profile: Iterable[int]) -> np.ndarray:
    x = np.zeros(snapshot.n_items)
    for j in profile:
        if snapshot.has_item(j):
            x[snapshot.item_index(j)] = 1.0
    return x


def _user_norms(counts: np.ndarray, norm: str) -> np.ndarray:
    if norm == "euclidean":
        return np.sqrt(counts)
    if norm == "count":
        return counts.astype(float)
    raise ValueError(f"unknown norm {norm!r}, expected 'euclidean' or 'count'")


def cosine_cf_scores(
    snapshot: Snapshot,
    profile: Iterable[int],
    u: int | None = None,
    k: int = DEFAULT_K,
    norm: str = "euclidean",
) -> dict[int, float]:
    """Neighbourhood scores ``sum_v <x, X_v> / sqrt(|x| |X_v|) * X_v``.

    ``x`` is the binary vector of ``profile`` and the sum runs over snapshot
    users other than ``u``. With ``norm="euclidean"`` ``|.|`` is the
    Euclidean norm; ``norm="count"`` uses the item count, which makes the
    similarity the usual cosine between binary vectors. ``k`` is accepted
    for interface symmetry and does not change the scores. Profile items
    are still present in the returned mapping; ranking excludes them.
    """
    x = _profile_vector(snapshot, profile)
    return {int(i): float(s) for i, s in zip(snapshot.item_ids, _cosine_rows(snapshot, x[None, :], [u], norm)[0])}


def _cosine_rows(snapshot: Snapshot, queries: np.ndarray, users: Sequence[int | None], norm: str) -> np.ndarray:
    X = snapshot.matrix
    inner = queries @ X.T
    qn = _user_norms(queries.sum(axis=1), norm)
    vn = _user_norms(X.sum(axis=1), norm)
    return _cosine_from_inner(snapshot, inner, qn, vn, users) @ X


def _cosine_from_inner(snapshot, inner, qn, vn, users):
    denom = np.sqrt(np.outer(qn, vn))
    with np.errstate(divide="ignore", invalid="ignore"):
        sim = np.where((inner > 0) & (denom > 0), inner / denom, 0.0)
    for r, u in enumerate(users):
        if u is not None and u in snapshot.user_items:
            sim[r, snapshot.user_index(u)] = 0.0
    return sim


def naive_cf_scores(snapshot: Snapshot, profile: Iterable[int], k: int = DEFAULT_K) -> dict[int, float]:
    """``max_{j in profile} #(U_i & U_j) / #U_j`` for every snapshot item.

    ``U_i`` are the owners of ``i`` in the full snapshot. Profile items the
    snapshot does not know are skipped; an empty profile scores all zeros.
    """
    ratio = _cooccurrence_ratio(snapshot)
    rows = [snapshot.item_index(j) for j in profile if snapshot.has_item(j)]
    s = ratio[rows].max(axis=0) if rows else np.zeros(snapshot.n_items)
    return {int(i): float(v) for i, v in zip(snapshot.item_ids, s)}


def _cooccurrence_ratio(snapshot: Snapshot) -> np.ndarray:
    X = snapshot.matrix
    co = X.T @ X
    counts = np.diag(co).copy()
    counts[counts == 0] = 1.0
    return co / counts[:, None]


class Recommender:
    """Base strategy. Subclasses provide :meth:`score_rows`."""

    name = "recommender"

    def score_rows(self, snapshot: Snapshot, queries: np.ndarray, users: Sequence[int | None]) -> np.ndarray:
        raise NotImplementedError

    def recommend(
        self,
        snapshot: Snapshot,
        profile: Iterable[int],
        u: int | None = None,
        k: int = DEFAULT_K,
    ) -> Recommendation:
        profile = frozenset(profile)
        x = _profile_vector(snapshot, profile)
        s = self.score_rows(snapshot, x[None, :], [u])[0]
        return top_k(dict(zip(snapshot.item_ids.tolist(), s.tolist())), profile, k, snapshot.item_ids.tolist())

    def hits(self, snapshot: Snapshot, rows: np.ndarray, cols: np.ndarray, k: int = DEFAULT_K) -> np.ndarray:
        """Leave-one-out hits for owned pairs ``(rows[n], cols[n])``.

        Entry ``n`` is True iff item ``cols[n]`` is in the top-``k`` list
        computed for its user's profile with that item removed.
        """
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        out = np.zeros(len(rows), dtype=bool)
        X = snapshot.matrix
        for start in range(0, len(rows), 2048):
            r = rows[start:start + 2048]
            c = cols[start:start + 2048]
            queries = X[r].copy()
            queries[np.arange(len(r)), c] = 0.0
            users = [int(snapshot.user_ids[x]) for x in r]
            key = _rank_key(self.score_rows(snapshot, queries, users))
            own = key[np.arange(len(r)), c][:, None]
            ids = np.arange(snapshot.n_items)
            before = (key > own) | ((key == own) & (ids[None, :] < c[:, None]))
            before &= queries == 0
            out[start:start + 2048] = before.sum(axis=1) < k
        return out

    def __repr__(self) -> str:
        return f"{type(self).__name__}()"


class ConstantRecommender(Recommender):
    """Always proposes the same ordered list.

    With ``exclude_profile`` the first ``k`` listed items not already in the
    query profile are returned; without it the first ``k`` listed items are
    returned for every query, which is the strictly constant algorithm.
    """

    name = "constant"

    def __init__(self, items: Sequence[int], exclude_profile: bool = True):
        seen: dict[int, None] = {}
        for i in items:
            seen.setdefault(int(i), None)
        self.items = tuple(seen)
        self.exclude_profile = exclude_profile

    def recommend(self, snapshot, profile, u=None, k=DEFAULT_K):
        if k < 1:
            raise ValueError(f"k must be >= 1, got {k}")
        profile = frozenset(profile) if self.exclude_profile else frozenset()
        out = [i for i in self.items if i not in profile][:k]
        return Recommendation(tuple(out), tuple(float(len(self.items) - self.items.index(i)) for i in out))

    def hits(self, snapshot, rows, cols, k=DEFAULT_K):
        pos = {i: n for n, i in enumerate(self.items)}
        out = np.zeros(len(rows), dtype=bool)
        for n, (r, c) in enumerate(zip(rows, cols)):
            item = int(snapshot.item_ids[c])
            p = pos.get(item)
            if p is None:
                continue
            if not self.exclude_profile:
                out[n] = p < k
                continue
            owned = snapshot.user_items[int(snapshot.user_ids[r])]
            ahead = sum(1 for j in self.items[:p] if j not in owned)
            out[n] = ahead < k
        return out

    def __repr__(self):
        return f"ConstantRecommender(items={list(self.items)!r}, exclude_profile={self.exclude_profile})"


def constant_recommender(items: Sequence[int], k: int = DEFAULT_K, exclude_profile: bool = True) -> ConstantRecommender:
    rec = ConstantRecommender(items, exclude_profile=exclude_profile)
    if len(rec.items) < k:
        raise ValueError(f"constant recommender needs at least k={k} distinct items, got {len(rec.items)}")
    return rec


class CosineCF(Recommender):
    name = "cosine_cf"

    def __init__(self, norm: str = "euclidean"):
        _user_norms(np.ones(1), norm)
        self.norm = norm

    def score_rows(self, snapshot, queries, users):
        return _cosine_rows(snapshot, queries, users, self.norm)

    def __repr__(self):
        return f"CosineCF(norm={self.norm!r})"


class NaiveCF(Recommender):
    name = "naive_cf"

    def __init__(self):
        self._cache: tuple[Snapshot, np.ndarray] | None = None

    def _ratio(self, snapshot):
        if self._cache is None or self._cache[0] is not snapshot:
            self._cache = (snapshot, _cooccurrence_ratio(snapshot))
        return self._cache[1]

    def score_rows(self, snapshot, queries, users):
        ratio = self._ratio(snapshot)
        out = np.zeros(queries.shape)
        for r, q in enumerate(queries):
            idx = np.nonzero(q)[0]
            if len(idx):
                out[r] = ratio[idx].max(axis=0)
        return out


ALGORITHMS = ("constant", "cosine_cf", "naive_cf")


def popularity_order(snapshot: Snapshot) -> list[int]:
    """Snapshot items by owner count descending, id ascending."""
    counts = snapshot.matrix.sum(axis=0)
    order = np.lexsort((snapshot.item_ids, -counts))
    return [int(i) for i in snapshot.item_ids[order]]


def make_recommender(name: str, reference: Snapshot | None = None, **params) -> Recommender:
    """Build a recommender by name.

    The constant list defaults to the popularity order of ``reference``.
    """
    if name == "constant":
        items = params.pop("items", None)
        if items is None:
            if reference is None:
                raise ValueError("constant recommender needs an item list or a reference snapshot")
            items = popularity_order(reference)
        exclude = params.pop("exclude_profile", True)
        if params:
            raise ValueError(f"unknown parameters for constant: {sorted(params)}")
        return ConstantRecommender(items, exclude_profile=_as_bool(exclude))
    if name == "cosine_cf":
        return CosineCF(**params)
    if name == "naive_cf":
        if params:
            raise ValueError(f"unknown parameters for naive_cf: {sorted(params)}")
        return NaiveCF()
    raise ValueError(f"unknown algorithm {name!r}; choose from {', '.join(ALGORITHMS)}")


def _as_bool(v) -> bool:
    if isinstance(v, str):
        if v.lower() in ("1", "true", "yes", "on"):
            return True
        if v.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {v!r}")
    return bool(v)
