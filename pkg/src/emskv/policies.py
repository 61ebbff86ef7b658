"""Compression policies behind one interface.

Every policy maps ``(cache, scores, config)`` to a new ``(cache, scores)``
pair, once after prefill and once after each decode step. Evict-only
baselines keep their survivors as exact tokens; only EMS uses centers and
the look-up-table.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from typing import ClassVar

import numpy as np

from . import ems
from .cache import HeadCacheState
from .config import CompressionConfig
from .errors import ConfigError
from .numerics import mean_pool_1d, top_k_indices
from .scoring import ScoreState


def _evict_to(cache: HeadCacheState, scores: ScoreState, keep) -> tuple[HeadCacheState, ScoreState]:
    keep = np.sort(np.asarray(keep, dtype=np.int64))
    return replace(cache.keep_locals(keep), compressed=True), scores.select(keep)


def _top_plus_recent(score: np.ndarray, n: int, config: CompressionConfig) -> np.ndarray:
    n_old = n - config.l_win
    top = top_k_indices(score[:n_old], config.n_budget - config.l_win)
    return np.concatenate([top, np.arange(n_old, n)])


def streaming_llm_compress(cache: HeadCacheState, scores: ScoreState, config: CompressionConfig):
    """Keep the first ``n_sink`` tokens and the most recent ``n_budget - n_sink``."""
    n = cache.n_local
    if n <= config.n_budget:
        return cache, scores
    keep = np.concatenate([np.arange(config.n_sink), np.arange(n - (config.n_budget - config.n_sink), n)])
    return _evict_to(cache, scores, keep)


def h2o_compress(cache: HeadCacheState, scores: ScoreState, config: CompressionConfig):
    """Heavy hitters by accumulated global attention, plus the ``l_win`` most recent tokens."""
    n = cache.n_local
    if n <= config.n_budget:
        return cache, scores
    return _evict_to(cache, scores, _top_plus_recent(scores.s_glo, n, config))


def snapkv_compress(cache: HeadCacheState, scores: ScoreState, config: CompressionConfig):
    """Rank by the pooled local-window score; applied once, after prefill."""
    n = cache.n_local
    if n <= config.n_budget:
        return cache, scores
    pooled = mean_pool_1d(scores.s_loc, config.kernel_size)
    return _evict_to(cache, scores, _top_plus_recent(pooled, n, config))


_CONFIG_FIELDS = {f.name for f in fields(CompressionConfig)}


@dataclass(frozen=True)
class Policy:
    """Base policy: the identity (full cache).

    ``overrides`` replaces config fields for this policy only, e.g.
    ``EMSPolicy(overrides={"gamma": 1.0})`` is the evict-only ablation.
    """

    kind: ClassVar[str] = "full"
    overrides: dict = field(default_factory=dict)
    label: str | None = None

    def __post_init__(self):
        unknown = set(self.overrides) - _CONFIG_FIELDS
        if unknown:
            raise ConfigError(f"unknown config override(s) for {self.kind}: {sorted(unknown)}")

    @property
    def name(self) -> str:
        return self.label or self.kind

    def resolve(self, config: CompressionConfig) -> CompressionConfig:
        return replace(config, **self.overrides) if self.overrides else config

    def compress_prefill(self, cache, scores, config):
        return cache, scores

    def compress_decode(self, cache, scores, config):
        return cache, scores


class FullPolicy(Policy):
    kind = "full"


class StreamingLLMPolicy(Policy):
    kind = "streaming_llm"

    def compress_prefill(self, cache, scores, config):
        return streaming_llm_compress(cache, scores, self.resolve(config))

    compress_decode = compress_prefill


class H2OPolicy(Policy):
    kind = "h2o"

    def compress_prefill(self, cache, scores, config):
        return h2o_compress(cache, scores, self.resolve(config))

    compress_decode = compress_prefill


class SnapKVPolicy(Policy):
    kind = "snapkv"

    def compress_prefill(self, cache, scores, config):
        return snapkv_compress(cache, scores, self.resolve(config))


class EMSPolicy(Policy):
    kind = "ems"

    def compress_prefill(self, cache, scores, config):
        cfg = self.resolve(config)
        if cache.compressed:
            return ems.decode_update(cache, scores, cfg)
        return ems.compress_prefill(cache.locals_block(), scores, cfg, seen=cache.seen)

    def compress_decode(self, cache, scores, config):
        return ems.decode_update(cache, scores, self.resolve(config))


POLICIES: dict[str, type[Policy]] = {
    cls.kind: cls for cls in (FullPolicy, StreamingLLMPolicy, H2OPolicy, SnapKVPolicy, EMSPolicy)
}
# CLI spelling
ALIASES = {"streaming": "streaming_llm"}


def make_policy(kind: str, **kwargs) -> Policy:
    kind = ALIASES.get(kind, kind)
    try:
        return POLICIES[kind](**kwargs)
    except KeyError:
        raise ConfigError(f"unknown policy {kind!r}; choose from {sorted(POLICIES)}") from None
