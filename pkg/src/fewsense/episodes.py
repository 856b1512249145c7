"""N-way K-shot episode sampling from a dataset split.

Support and query entries are grouped by class, in class_ids order, which
downstream prototype/attention code relies on. Index sampling uses the
stdlib random module (cheap enough to draw tens of thousands of episodes
per second); numeric noise elsewhere uses numpy generators.
"""
from __future__ import annotations

import random
from dataclasses import dataclass
from typing import Iterator, NamedTuple

from .csi_core import CsiRecord, GestureDataset
from .errors import ConfigurationError, EpisodeError

PHASES = ("meta_train", "meta_test")


@dataclass(frozen=True)
class EpisodeConfig:
    n_way: int = 5
    k_shot: int = 1
    n_query: int = 10
    phase: str = "meta_train"

    def __post_init__(self):
        if self.n_way < 2:
            raise ConfigurationError("n_way must be >= 2")
        if self.k_shot < 1:
            raise ConfigurationError("k_shot must be >= 1")
        if self.n_query < 1:
            raise ConfigurationError("n_query must be >= 1")
        if self.phase not in PHASES:
            raise ConfigurationError(f"phase must be one of {PHASES}, got {self.phase!r}")


@dataclass(frozen=True)
class Episode:
    """One N-way K-shot task: N*K support pairs and N*N_q query pairs."""

    support: tuple[tuple[CsiRecord, int], ...]
    query: tuple[tuple[CsiRecord, int], ...]
    class_ids: tuple[int, ...]


class StreamItem(NamedTuple):
    epoch: int  # 1-based, for curriculum lookup
    episode: int  # 1-based within the epoch
    data: Episode


def _class_pools(ds: GestureDataset, cfg: EpisodeConfig):
    """Per-class record pools for the phase, plus which classes are too small."""
    phase_labels = ds.labels_for_phase(cfg.phase)
    needed = cfg.k_shot + cfg.n_query
    index = ds.indices_by_label()
    pools = {label: index[label] for label in phase_labels}
    eligible = sorted(label for label, idxs in pools.items() if len(idxs) >= needed)
    deficient = sorted(label for label, idxs in pools.items() if len(idxs) < needed)
    return pools, eligible, deficient


def _draw(records, pools, eligible, deficient, cfg: EpisodeConfig, rng: random.Random) -> Episode:
    if len(eligible) < cfg.n_way:
        detail = (
            f"; classes {deficient} have fewer than {cfg.k_shot + cfg.n_query} records"
            if deficient
            else ""
        )
        raise EpisodeError(
            f"need {cfg.n_way} classes with {cfg.k_shot + cfg.n_query} records each, "
            f"only {len(eligible)} eligible{detail}"
        )
    class_ids = tuple(rng.sample(eligible, cfg.n_way))
    support = []
    query = []
    for label in class_ids:
        picks = rng.sample(pools[label], cfg.k_shot + cfg.n_query)
        for idx in picks[: cfg.k_shot]:
            support.append((records[idx], label))
        for idx in picks[cfg.k_shot :]:
            query.append((records[idx], label))
    return Episode(support=tuple(support), query=tuple(query), class_ids=class_ids)


def sample_episode(ds: GestureDataset, cfg: EpisodeConfig, rng: random.Random) -> Episode:
    """Draw one episode; support/query are disjoint, deterministic under rng state."""
    pools, eligible, deficient = _class_pools(ds, cfg)
    return _draw(ds.records, pools, eligible, deficient, cfg, rng)


def episode_stream(
    ds: GestureDataset,
    cfg: EpisodeConfig,
    episodes_per_epoch: int,
    epochs: int,
    seed: int,
    *,
    _rng: random.Random | None = None,
    _start_epoch: int = 1,
) -> Iterator[StreamItem]:
    """Yield epochs x episodes_per_epoch episodes, tagged with (epoch, episode).

    The underscore arguments let a checkpoint resume mid-stream with a
    restored rng state; normal callers pass only the seed.
    """
    if episodes_per_epoch < 1 or epochs < 1:
        raise ConfigurationError("episodes_per_epoch and epochs must be >= 1")
    pools, eligible, deficient = _class_pools(ds, cfg)
    rng = _rng if _rng is not None else random.Random(seed)
    for epoch in range(_start_epoch, epochs + 1):
        for episode in range(1, episodes_per_epoch + 1):
            yield StreamItem(
                epoch, episode, _draw(ds.records, pools, eligible, deficient, cfg, rng)
            )
