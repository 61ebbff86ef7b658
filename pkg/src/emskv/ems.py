"""Evict-then-Merge compression.

Prefill: rank tokens by the pooled Global-Local score, drop the least
relevant outright, keep the top ``n_imp`` as class centers and fold the next
``n_tbm`` into them. A to-be-merged (TBM) token joins the center it is most
redundant with when that redundancy reaches ``tau``; otherwise it joins the
zero class, which is eviction expressed as a merge.

Decode: each step the oldest local token graduates to a center, and the
least important center is merged or evicted the same way so the center
count stays fixed.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .analysis import redundancy_between
from .cache import ZERO, HeadCacheState, TokenBlock
from .config import CompressionConfig
from .numerics import as_matrix, pairwise_cosine, top_k_indices
from .scoring import ScoreState, effective_score, importance


@dataclass(frozen=True)
class TokenPartition:
    irrelevant: np.ndarray
    tbm: np.ndarray
    important: np.ndarray
    local: np.ndarray


def partition_tokens(pooled_score, config: CompressionConfig) -> TokenPartition:
    """Split token indices into irrelevant / TBM / important / local sets.

    The last ``l_win`` tokens are local. The rest are ranked by score (ties
    toward the earlier token); the first ``n_imp`` are important, the next
    ``n_tbm`` are TBM, the remainder irrelevant. Each set is returned sorted.
    """
    s = np.asarray(pooled_score, dtype=np.float64)
    n = s.shape[0]
    n_loc = min(config.l_win, n)
    local = np.arange(n - n_loc, n, dtype=np.int64)
    if n <= config.n_budget:
        return TokenPartition(np.zeros(0, np.int64), np.zeros(0, np.int64), np.arange(n - n_loc, dtype=np.int64), local)
    rank = top_k_indices(s[: n - n_loc], n - n_loc)
    c, t = config.n_imp, config.n_tbm
    return TokenPartition(
        irrelevant=np.sort(rank[c + t :]),
        tbm=np.sort(rank[c : c + t]),
        important=np.sort(rank[:c]),
        local=local,
    )


def assign_merge_destinations(R, tau: float) -> np.ndarray:
    """Best center per TBM row, or ``ZERO`` when its redundancy is below ``tau``."""
    r = as_matrix(R, "R")
    if r.shape[1] == 0:
        return np.full(r.shape[0], ZERO, dtype=np.int64)
    best = np.argmax(r, axis=1)
    ok = r[np.arange(r.shape[0]), best] >= tau
    return np.where(ok, best, ZERO).astype(np.int64)


def _unit_rows(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    norms = np.sqrt((x * x).sum(axis=1))
    units = np.divide(x, norms[:, None], out=np.zeros_like(x), where=norms[:, None] > 0)
    return units, norms


def _merge_weights(w: np.ndarray) -> np.ndarray:
    w = np.maximum(np.asarray(w, dtype=np.float64), 0.0)
    total = w.sum()
    if not total > 0:
        return np.full(w.shape, 1.0 / w.size)
    return w / total


def _merged_center(unit_keys, values, weights, fallback_key):
    w = _merge_weights(weights)
    key = (w[:, None] * unit_keys).sum(axis=0)
    norm = np.sqrt((key * key).sum())
    key = key / norm if norm > 0 else fallback_key
    return key, (w[:, None] * values).sum(axis=0)


def centers_from_tokens(tokens: TokenBlock) -> HeadCacheState:
    """A cache whose centers are exactly ``tokens``, each with its own LUT entry."""
    units, norms = _unit_rows(tokens.keys)
    d = tokens.keys.shape[1]
    n = len(tokens)
    return HeadCacheState(
        head_dim=d,
        center_keys=units,
        center_norms=norms,
        center_values=tokens.values.copy(),
        center_positions=tokens.positions.astype(np.int64),
        lut_positions=tokens.positions.astype(np.int64),
        lut_slots=np.arange(n, dtype=np.int64),
        local_keys=np.zeros((0, d)),
        local_values=np.zeros((0, d)),
        local_positions=np.zeros(0, dtype=np.int64),
        compressed=True,
        seen=int(tokens.positions.max()) + 1 if n else 0,
    )


def weighted_merge(cache: HeadCacheState, tbm: TokenBlock, destinations, tbm_weights, center_weights) -> HeadCacheState:
    """Fold TBM tokens into their destination centers.

    Each center's normalized key becomes the renormalized weighted mean of its
    members' unit keys and its value the weighted mean of their raw values,
    with weights proportional to the members' scores. Centers keep their own
    norm and position. Every TBM token gains a LUT entry, pointing at its
    center or at ``ZERO``.
    """
    dest = np.asarray(destinations, dtype=np.int64)
    tw = np.asarray(tbm_weights, dtype=np.float64)
    cw = np.asarray(center_weights, dtype=np.float64)
    units, _ = _unit_rows(tbm.keys) if len(tbm) else (tbm.keys, None)
    keys = cache.center_keys.copy()
    values = cache.center_values.copy()
    for c in np.unique(dest[dest != ZERO]):
        members = np.flatnonzero(dest == c)
        keys[c], values[c] = _merged_center(
            np.concatenate([cache.center_keys[c : c + 1], units[members]]),
            np.concatenate([cache.center_values[c : c + 1], tbm.values[members]]),
            np.concatenate([cw[c : c + 1], tw[members]]),
            cache.center_keys[c],
        )
    lut_pos = np.concatenate([cache.lut_positions, tbm.positions.astype(np.int64)])
    lut_slots = np.concatenate([cache.lut_slots, dest])
    order = np.argsort(lut_pos, kind="stable")
    return replace(cache, center_keys=keys, center_values=values, lut_positions=lut_pos[order], lut_slots=lut_slots[order])


def compress_prefill(tokens: TokenBlock, scores: ScoreState, config: CompressionConfig, seen: int | None = None):
    """Compress a block of exact tokens (in position order) into centers + locals.

    Returns ``(cache, scores)`` with the score vectors compacted to the
    stored entries; centers accumulate the score mass of tokens merged into
    them. Blocks that fit the budget are returned uncompressed.
    """
    n = len(tokens)
    seen = int(tokens.positions[-1]) + 1 if seen is None else seen
    if n <= config.n_budget:
        cache = replace(HeadCacheState.from_tokens(tokens.keys, tokens.values, tokens.positions), seen=seen)
        return cache, scores
    pooled = effective_score(scores, config.kernel_size, config.score_mode)
    part = partition_tokens(pooled, config)
    weight = importance(scores, config.score_mode)

    cache = centers_from_tokens(tokens.take(part.important))
    acc = scores.stacked()
    center_acc = acc[part.important].copy()
    if part.tbm.size:
        tbm = tokens.take(part.tbm)
        imp = tokens.take(part.important)
        R = redundancy_between(tbm.keys, tbm.values, imp.keys, imp.values)
        dest = assign_merge_destinations(R, config.tau)
        cache = weighted_merge(cache, tbm, dest, weight[part.tbm], weight[part.important])
        merged = dest != ZERO
        np.add.at(center_acc, dest[merged], acc[part.tbm][merged])
    loc = tokens.take(part.local)
    cache = replace(cache, local_keys=loc.keys, local_values=loc.values, local_positions=loc.positions, seen=seen)
    new_scores = ScoreState.from_stacked(np.concatenate([center_acc, acc[part.local]]), scores.l_win, scores.window_fill)
    return cache, new_scores


def _trim_lut(lut_pos: np.ndarray, lut_slots: np.ndarray, capacity: int):
    while lut_slots.size > capacity:
        zero = np.flatnonzero(lut_slots == ZERO)
        if zero.size:
            drop = zero[0]
        else:
            counts = np.bincount(lut_slots)
            shared = np.flatnonzero(counts[lut_slots] > 1)
            if not shared.size:
                break
            drop = shared[0]
        lut_pos = np.delete(lut_pos, drop)
        lut_slots = np.delete(lut_slots, drop)
    return lut_pos, lut_slots


def _graduate_oldest_local(cache: HeadCacheState) -> HeadCacheState:
    unit, norm = _unit_rows(cache.local_keys[:1])
    slot = cache.n_centers
    pos = cache.local_positions[:1]
    return replace(
        cache,
        center_keys=np.concatenate([cache.center_keys, unit]),
        center_norms=np.concatenate([cache.center_norms, norm]),
        center_values=np.concatenate([cache.center_values, cache.local_values[:1]]),
        center_positions=np.concatenate([cache.center_positions, pos]),
        lut_positions=np.concatenate([cache.lut_positions, pos]),
        lut_slots=np.concatenate([cache.lut_slots, [slot]]).astype(np.int64),
        local_keys=cache.local_keys[1:],
        local_values=cache.local_values[1:],
        local_positions=cache.local_positions[1:],
    )


def _retire_center(cache: HeadCacheState, scores: ScoreState, config: CompressionConfig):
    """Merge or evict the least important center; one fewer center afterwards."""
    c = cache.n_centers
    weight = importance(scores, config.score_mode)[:c]
    tbm = int(top_k_indices(weight, c)[-1])  # ranked last: ties keep the earlier token
    others = np.delete(np.arange(c), tbm)
    keys, values = cache.center_keys, cache.center_values
    slots = cache.lut_slots.copy()
    acc = scores.stacked()
    absorber = ZERO
    if config.n_tbm > 0 and others.size:
        r = pairwise_cosine(keys[tbm : tbm + 1], keys[others]) * pairwise_cosine(values[tbm : tbm + 1], values[others])
        j = int(np.argmax(r[0]))
        if r[0, j] >= config.tau:
            absorber = int(others[j])
    if absorber != ZERO:
        keys, values = keys.copy(), values.copy()
        keys[absorber], values[absorber] = _merged_center(
            keys[[absorber, tbm]], values[[absorber, tbm]], weight[[absorber, tbm]], keys[absorber]
        )
        acc = acc.copy()
        acc[absorber] += acc[tbm]
    slots[slots == tbm] = absorber
    slots[slots > tbm] -= 1
    lut_pos, slots = _trim_lut(cache.lut_positions, slots, config.lut_capacity)
    cache = replace(
        cache,
        center_keys=np.delete(keys, tbm, axis=0),
        center_norms=np.delete(cache.center_norms, tbm),
        center_values=np.delete(values, tbm, axis=0),
        center_positions=np.delete(cache.center_positions, tbm),
        lut_positions=lut_pos,
        lut_slots=slots,
    )
    keep = np.delete(np.arange(acc.shape[0]), tbm)
    return cache, ScoreState.from_stacked(acc[keep], scores.l_win, scores.window_fill)


def decode_update(cache: HeadCacheState, scores: ScoreState, config: CompressionConfig):
    """Restore the budget after a decode step appended one exact token.

    An uncompressed cache just grows until it exceeds the budget, at which
    point the whole block is compressed as at prefill.
    """
    if not cache.compressed:
        if cache.n_stored > config.n_budget:
            return compress_prefill(cache.locals_block(), scores, config, seen=cache.seen)
        return cache, scores
    while cache.n_local > config.l_win:
        cache = _graduate_oldest_local(cache)
        if cache.n_centers > config.n_imp:
            cache, scores = _retire_center(cache, scores, config)
    return cache, scores
