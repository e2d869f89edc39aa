"""Synthetic adoption histories with recommendation-campaign shocks.

Each user starts with one to three items on day 0. Every later day, each
user adopts one unowned item with probability ``organic_rate``, drawn from a
fixed Zipf preference in which item 0 is the most popular. On a campaign day
the campaign's algorithm recommends ``k`` items to every user from the
previous day's snapshot, and each recommended item is adopted independently
with probability ``acceptance_prob``.
"""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field, fields, replace

import numpy as np

from .core import InteractionLog, Snapshot
from .recommenders import ALGORITHMS, make_recommender

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Campaign:
    day: int
    algorithm: str = "cosine_cf"
    k: int = 5
    acceptance_prob: float = 0.3


@dataclass(frozen=True)
class ScenarioConfig:
    n_users: int = 2000
    n_items: int = 60
    horizon_days: int = 200
    organic_rate: float = 0.02
    popularity_skew: float = 1.1
    campaigns: tuple[Campaign, ...] = field(
        default_factory=lambda: (Campaign(110), Campaign(160))
    )
    seed: int = 2015

    def validate(self) -> None:
        if self.n_users < 1 or self.n_items < 1:
            raise ValueError("n_users and n_items must be >= 1")
        if self.horizon_days < 1:
            raise ValueError("horizon_days must be >= 1")
        if not 0.0 <= self.organic_rate <= 1.0:
            raise ValueError(f"organic_rate must lie in [0, 1], got {self.organic_rate}")
        if self.popularity_skew < 0:
            raise ValueError(f"popularity_skew must be >= 0, got {self.popularity_skew}")
        for c in self.campaigns:
            if c.algorithm not in ALGORITHMS:
                raise ValueError(f"unknown campaign algorithm {c.algorithm!r}; choose from {', '.join(ALGORITHMS)}")
            if not 1 <= c.day < self.horizon_days:
                raise ValueError(f"campaign day {c.day} outside [1, {self.horizon_days})")
            if c.k < 1:
                raise ValueError(f"campaign k must be >= 1, got {c.k}")
            if not 0.0 <= c.acceptance_prob <= 1.0:
                raise ValueError(f"acceptance_prob must lie in [0, 1], got {c.acceptance_prob}")

    @property
    def campaign_days(self) -> tuple[int, ...]:
        return tuple(sorted(c.day for c in self.campaigns))

    # "key = value" lines; "campaign = day [algorithm [k [acceptance_prob]]]" may
    # repeat and replaces the default campaigns, "campaigns = none" removes them

    @classmethod
    def parse(cls, text: str, source: str = "<config>") -> "ScenarioConfig":
        scalars = {f.name: f.type for f in fields(cls) if f.name != "campaigns"}
        kwargs: dict = {}
        campaigns: list[Campaign] = []
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{source}:{lineno}: expected 'key = value'")
            key, value = (s.strip() for s in line.split("=", 1))
            try:
                if key == "campaigns" and value.lower() == "none":
                    kwargs["campaigns"] = ()
                elif key == "campaign":
                    parts = value.split()
                    if not 1 <= len(parts) <= 4:
                        raise ValueError("expected 'day [algorithm [k [acceptance_prob]]]'")
                    conv = (int, str, int, float)
                    campaigns.append(Campaign(*(f(v) for f, v in zip(conv, parts))))
                elif key in scalars:
                    kwargs[key] = float(value) if scalars[key] == "float" else int(value)
                else:
                    raise ValueError(f"unknown key {key!r}")
            except ValueError as exc:
                raise ValueError(f"{source}:{lineno}: {exc}") from None
        if campaigns:
            kwargs["campaigns"] = tuple(campaigns)
        cfg = cls(**kwargs)
        cfg.validate()
        return cfg

    @classmethod
    def read(cls, path: str | os.PathLike) -> "ScenarioConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.parse(fh.read(), str(path))

    def dumps(self) -> str:
        lines = [f"{f.name} = {getattr(self, f.name)}" for f in fields(self) if f.name != "campaigns"]
        lines += [f"campaign = {c.day} {c.algorithm} {c.k} {c.acceptance_prob}" for c in self.campaigns]
        return "\n".join(lines) + "\n"

    def with_seed(self, seed: int) -> "ScenarioConfig":
        return replace(self, seed=seed)


def zipf_preference(n_items: int, skew: float) -> np.ndarray:
    w = 1.0 / np.arange(1, n_items + 1) ** skew
    return w / w.sum()


def _draw_unowned(rng: np.random.Generator, pref: np.ndarray, owned: np.ndarray) -> int | None:
    w = np.where(owned, 0.0, pref)
    total = w.sum()
    if total <= 0:
        return None
    j = int(np.searchsorted(np.cumsum(w), rng.random() * total, side="right"))
    if j >= len(w) or owned[j]:
        # roundoff at the top of the CDF
        j = int(np.nonzero(~owned)[0][-1])
    return j


def seed_population(config: ScenarioConfig, rng: np.random.Generator | None = None) -> list[tuple[int, int, int]]:
    """Day-0 adoptions: one to three Zipf-drawn items per user."""
    rng = rng if rng is not None else np.random.default_rng(config.seed)
    pref = zipf_preference(config.n_items, config.popularity_skew)
    events = []
    for u in range(config.n_users):
        n = min(int(rng.integers(1, 4)), config.n_items)
        for i in sorted(rng.choice(config.n_items, size=n, replace=False, p=pref).tolist()):
            events.append((u, int(i), 0))
    return events


def _snapshot(owned: np.ndarray, day: int) -> Snapshot:
    users, items = np.nonzero(owned)
    return Snapshot.from_pairs(day, users, items)


def generate(config: ScenarioConfig) -> InteractionLog:
    """Run the scenario and return its interaction log (deterministic in the seed)."""
    config.validate()
    rng = np.random.default_rng(config.seed)
    pref = zipf_preference(config.n_items, config.popularity_skew)
    owned = np.zeros((config.n_users, config.n_items), dtype=bool)
    events = seed_population(config, rng)
    for u, i, _ in events:
        owned[u, i] = True
    campaigns: dict[int, list] = {}
    for c in config.campaigns:
        campaigns.setdefault(c.day, []).append(c)

    for day in range(1, config.horizon_days):
        before = _snapshot(owned, day - 1) if day in campaigns else None
        adopters = np.nonzero(rng.random(config.n_users) < config.organic_rate)[0]
        for u in adopters:
            j = _draw_unowned(rng, pref, owned[u])
            if j is not None:
                owned[u, j] = True
                events.append((int(u), j, day))
        for c in campaigns.get(day, ()):
            g = make_recommender(c.algorithm, reference=before)
            n_new = 0
            for u in before.user_ids:
                rec = g.recommend(before, before.user_items[int(u)], int(u), c.k)
                for i in rec.items:
                    if rng.random() < c.acceptance_prob and not owned[u, i]:
                        owned[u, i] = True
                        events.append((int(u), i, day))
                        n_new += 1
            log.info("campaign day %d (%s, k=%d): %d adoptions", day, c.algorithm, c.k, n_new)
    return InteractionLog(events)
