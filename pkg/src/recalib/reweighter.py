"""Item reweighting that makes a current item marginal mimic a reference one.

The weighted marginal of the current snapshot is

    q_i(w) = sum_u P(u) w_i X_ui / s_u,    s_u = sum_j w_j X_uj

and the objective is the KL divergence from the reference marginal ``r`` to
``q(w)`` (natural log). Its gradient is

    dD/dw_k = sum_u P(u) X_uk / s_u * (a_u / s_u - r_k / q_k),
    a_u     = sum_i (r_i / q_i) w_i X_ui.

Optimization runs plain gradient descent on ``xi = log w`` over the free
items, with a backtracking Armijo line search; only accepted steps move the
iterate, so the divergence never increases.
"""

from __future__ import annotations

import csv
import logging
import math
import os
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

from .core import EvalDistribution, Snapshot, marginal_vector

log = logging.getLogger(__name__)

W_MIN = 1e-9


class SupportError(ValueError):
    """A reference item has zero probability under the current marginal."""

    def __init__(self, item: int):
        super().__init__(f"item {item} has reference mass but zero current probability")
        self.item = item


@dataclass(frozen=True)
class ReferenceMarginal:
    day: int
    probs: Mapping[int, float]

    def __post_init__(self):
        vals = np.fromiter(self.probs.values(), dtype=float, count=len(self.probs))
        if len(vals) and (np.any(vals < 0) or abs(vals.sum() - 1.0) > 1e-9):
            raise ValueError("reference probabilities must be nonnegative and sum to 1")

    def write_csv(self, path: str | os.PathLike) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            fh.write(f"# day={self.day}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("item_id", "probability"))
            for i in sorted(self.probs):
                w.writerow((i, repr(float(self.probs[i]))))

    @classmethod
    def read_csv(cls, path: str | os.PathLike) -> "ReferenceMarginal":
        with open(path, newline="", encoding="utf-8") as fh:
            meta = _parse_comment(fh.readline())
            reader = csv.reader(fh)
            header = next(reader, None)
            if header != ["item_id", "probability"]:
                raise ValueError(f"{path}: bad header {header!r}")
            probs = {int(i): float(p) for i, p in reader}
        return cls(int(meta["day"]), probs)


def reference_marginal(snapshot: Snapshot, dist: EvalDistribution | None = None) -> ReferenceMarginal:
    """Unweighted item marginal of ``snapshot`` recorded as a reference."""
    dist = (dist or EvalDistribution()).with_weights(None)
    q = marginal_vector(snapshot, dist.user_vector(snapshot), np.ones(snapshot.n_items))
    return ReferenceMarginal(snapshot.day, {int(i): float(p) for i, p in zip(snapshot.item_ids, q)})


@dataclass(frozen=True)
class OptimizerOptions:
    max_iter: int = 5000
    gtol: float = 1e-8
    ftol: float = 1e-10
    armijo: float = 1e-4
    shrink: float = 0.5
    initial_step: float = 1.0
    max_move: float = 5.0  # largest log-weight change per step
    min_step: float = 1e-20


@dataclass
class WeightSolution:
    weights: dict[int, float]
    free_items: tuple[int, ...]
    divergence_initial: float
    divergence_final: float
    iterations: int
    converged: bool
    dropped_items: tuple[int, ...] = ()
    marginal: dict[int, float] = field(default_factory=dict, repr=False)

    @property
    def p(self) -> int:
        return len(self.free_items)

    def write_csv(self, path: str | os.PathLike) -> None:
        free = set(self.free_items)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            fh.write(
                f"# p={self.p},divergence_initial={self.divergence_initial!r},"
                f"divergence_final={self.divergence_final!r},iterations={self.iterations},"
                f"converged={int(self.converged)}\n"
            )
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("item_id", "weight", "free"))
            for i in sorted(self.weights):
                w.writerow((i, repr(self.weights[i]), int(i in free)))

    @classmethod
    def read_csv(cls, path: str | os.PathLike) -> "WeightSolution":
        with open(path, newline="", encoding="utf-8") as fh:
            meta = _parse_comment(fh.readline())
            reader = csv.reader(fh)
            header = next(reader, None)
            if header != ["item_id", "weight", "free"]:
                raise ValueError(f"{path}: bad header {header!r}")
            weights, free = {}, []
            for i, wt, f in reader:
                weights[int(i)] = float(wt)
                if int(f):
                    free.append(int(i))
        return cls(
            weights,
            tuple(free),
            float(meta["divergence_initial"]),
            float(meta["divergence_final"]),
            int(meta["iterations"]),
            bool(int(meta["converged"])),
        )


def _parse_comment(line: str) -> dict[str, str]:
    if not line.startswith("#"):
        raise ValueError(f"expected '# key=value,...' metadata line, got {line!r}")
    return dict(kv.split("=", 1) for kv in line[1:].strip().split(","))


def select_top_p(ref: ReferenceMarginal, current: Mapping[int, float], p: int) -> tuple[int, ...]:
    """The ``p`` items whose reference and current probabilities differ most.

    Items missing on one side count as probability 0 there. Ties go to the
    smaller item id; ``p`` is clamped to the size of the item universe.
    """
    if p < 0:
        raise ValueError(f"p must be >= 0, got {p}")
    universe = sorted(set(ref.probs) | set(current))
    dev = np.array([abs(ref.probs.get(i, 0.0) - current.get(i, 0.0)) for i in universe])
    order = np.lexsort((np.asarray(universe), -dev))
    return tuple(universe[n] for n in order[: min(p, len(universe))])


def kl_divergence(ref: ReferenceMarginal, current_weighted: Mapping[int, float]) -> float:
    """``sum_i r_i log(r_i / q_i)`` over reference items with ``r_i > 0``."""
    total = 0.0
    for i in sorted(ref.probs):
        r = ref.probs[i]
        if r <= 0:
            continue
        q = current_weighted.get(i, 0.0)
        if q <= 0:
            raise SupportError(i)
        total += r * math.log(r / q)
    return max(total, 0.0)


class _Problem:
    """Divergence and gradient on arrays aligned with a snapshot's items."""

    def __init__(self, snapshot: Snapshot, dist: EvalDistribution, ref: ReferenceMarginal):
        self.snapshot = snapshot
        self.X = snapshot.matrix
        self.pu = dist.user_vector(snapshot)
        known = set(int(i) for i in snapshot.item_ids)
        self.dropped = tuple(sorted(i for i, r in ref.probs.items() if r > 0 and i not in known))
        r = np.array([ref.probs.get(int(i), 0.0) for i in snapshot.item_ids], dtype=float)
        if r.sum() <= 0:
            raise ValueError("reference and snapshot share no item with positive reference mass")
        self.r = r / r.sum()
        self.support = self.r > 0
        self.r_log_r = float(np.sum(self.r[self.support] * np.log(self.r[self.support])))

    def marginal(self, w: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        s = self.X @ w
        return (self.pu / s) @ self.X * w, s

    def divergence(self, w: np.ndarray) -> float:
        q, _ = self.marginal(w)
        qs = q[self.support]
        if np.any(qs <= 0):
            return math.inf
        return self.r_log_r - float(np.sum(self.r[self.support] * np.log(qs)))

    def gradient(self, w: np.ndarray) -> np.ndarray:
        q, s = self.marginal(w)
        ratio = np.zeros_like(q)
        ratio[self.support] = self.r[self.support] / q[self.support]
        a = self.X @ (ratio * w)
        return (self.pu * a / s**2) @ self.X - ((self.pu / s) @ self.X) * ratio


def _weight_vector(snapshot: Snapshot, weights: Mapping[int, float] | None) -> np.ndarray:
    return EvalDistribution(None, weights).weight_vector(snapshot)


def divergence(snapshot: Snapshot, dist: EvalDistribution, ref: ReferenceMarginal) -> float:
    """Divergence of ``dist``'s weighted marginal on ``snapshot`` from ``ref``.

    Reference items missing from the snapshot are dropped and the reference
    renormalized over the remaining ones.
    """
    prob = _Problem(snapshot, dist, ref)
    return max(prob.divergence(_weight_vector(snapshot, dist.weights)), 0.0)


def gradient_of_divergence(
    snapshot_t1: Snapshot,
    dist: EvalDistribution,
    ref: ReferenceMarginal,
    free_items: Iterable[int],
    weights: Mapping[int, float] | None = None,
) -> dict[int, float]:
    """Partial derivatives of the divergence with respect to the free weights."""
    prob = _Problem(snapshot_t1, dist, ref)
    w = _weight_vector(snapshot_t1, weights if weights is not None else dist.weights)
    g = prob.gradient(w)
    out = {}
    for i in free_items:
        out[int(i)] = float(g[snapshot_t1.item_index(i)]) if snapshot_t1.has_item(i) else 0.0
    return out


def optimize_weights(
    snapshot_t1: Snapshot,
    dist: EvalDistribution,
    ref: ReferenceMarginal,
    p: int,
    opts: OptimizerOptions | None = None,
    free_items: Iterable[int] | None = None,
) -> WeightSolution:
    """Fit the weights of the ``p`` most deviating items to the reference.

    The free items are chosen once, from the unweighted marginal of
    ``snapshot_t1``. Every other item keeps weight 1. ``free_items``
    overrides the selection.
    """
    opts = opts or OptimizerOptions()
    if p < 1 and free_items is None:
        raise ValueError(f"p must be >= 1, got {p}")
    dist = dist.with_weights(None)
    prob = _Problem(snapshot_t1, dist, ref)
    if free_items is None:
        q0, _ = prob.marginal(np.ones(snapshot_t1.n_items))
        current = {int(i): float(v) for i, v in zip(snapshot_t1.item_ids, q0)}
        free_items = select_top_p(ref, current, p)
    free_items = tuple(int(i) for i in free_items)
    idx = np.array([snapshot_t1.item_index(i) for i in free_items if snapshot_t1.has_item(i)], dtype=np.int64)

    w = np.ones(snapshot_t1.n_items)
    f = f0 = prob.divergence(w)
    xi = np.zeros(len(idx))
    g = prob.gradient(w)[idx] * w[idx]
    step = opts.initial_step
    converged = len(idx) == 0
    it = 0
    while not converged and it < opts.max_iter:
        if np.max(np.abs(g)) < opts.gtol:
            converged = True
            break
        gg = float(g @ g)
        t = min(step, opts.max_move / np.max(np.abs(g)))
        while t >= opts.min_step:
            xi_new = xi - t * g
            w_new = w.copy()
            w_new[idx] = np.exp(xi_new)
            f_new = prob.divergence(w_new)
            if f_new <= f - opts.armijo * t * gg:
                break
            t *= opts.shrink
        else:
            log.debug("line search stalled at iteration %d, D=%g", it, f)
            break
        it += 1
        g_new = prob.gradient(w_new)[idx] * w_new[idx]
        s, y = xi_new - xi, g_new - g
        sy = float(s @ y)
        # Barzilai-Borwein trial step for the next line search
        step = float(s @ s) / sy if sy > 0 else opts.initial_step
        rel = (f - f_new) / max(abs(f), 1e-300)
        xi, w, f, g = xi_new, w_new, f_new, g_new
        if rel < opts.ftol or np.max(np.abs(g)) < opts.gtol:
            converged = True

    w_rep = np.maximum(w, W_MIN)
    f_final = max(prob.divergence(w_rep), 0.0)
    q, _ = prob.marginal(w_rep)
    log.info(
        "optimized %d weights at day %d: D %.3e -> %.3e in %d iterations (converged=%s)",
        len(idx), snapshot_t1.day, f0, f_final, it, converged,
    )
    return WeightSolution(
        weights={int(i): float(v) for i, v in zip(snapshot_t1.item_ids, w_rep)},
        free_items=free_items,
        divergence_initial=max(f0, 0.0),
        divergence_final=f_final,
        iterations=it,
        converged=converged,
        dropped_items=prob.dropped,
        marginal={int(i): float(v) for i, v in zip(snapshot_t1.item_ids, q)},
    )
