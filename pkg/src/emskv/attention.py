"""Single-layer causal attention over a pluggable compressed KV cache.

Keys are stored raw (pre-rotary) and rotated on the fly at expansion time,
which is what lets the merge policy compare and average raw keys.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from .cache import ZERO, HeadCacheState
from .config import CompressionConfig
from .errors import InvalidArgumentError, StateError
from .numerics import as_matrix, as_vector, attention_row
from .scoring import ScoreState, prefill_scores, update_scores_decode


@dataclass(frozen=True)
class RopeParams:
    head_dim: int
    base: float = 10000.0

    def __post_init__(self):
        if self.head_dim < 2 or self.head_dim % 2:
            raise InvalidArgumentError(f"rotary head_dim must be even and positive, got {self.head_dim}")
        if not self.base > 0:
            raise InvalidArgumentError(f"rotary base must be positive, got {self.base}")

    @property
    def inv_freq(self) -> np.ndarray:
        return self.base ** (-np.arange(0, self.head_dim, 2, dtype=np.float64) / self.head_dim)


def rope_rotate(x, positions, base: Optional[float]) -> np.ndarray:
    """Rotate each row of ``x`` by its position; ``base=None`` is the identity.

    Consecutive element pairs ``(2i, 2i+1)`` rotate by ``pos * base**(-2i/d)``.
    """
    x = as_matrix(x, "x")
    if base is None:
        return x
    pos = np.asarray(positions, dtype=np.float64).reshape(-1)
    if pos.shape[0] != x.shape[0]:
        raise InvalidArgumentError(f"{pos.shape[0]} positions for {x.shape[0]} rows")
    inv_freq = RopeParams(x.shape[1], base).inv_freq
    ang = pos[:, None] * inv_freq[None, :]
    cos, sin = np.cos(ang), np.sin(ang)
    even, odd = x[:, 0::2], x[:, 1::2]
    out = np.empty_like(x)
    out[:, 0::2] = even * cos - odd * sin
    out[:, 1::2] = even * sin + odd * cos
    return out


def apply_rope(v, position: int, params: RopeParams) -> np.ndarray:
    vec = as_vector(v, "v")
    if vec.shape[0] != params.head_dim:
        raise InvalidArgumentError(f"vector length {vec.shape[0]} != head_dim {params.head_dim}")
    if position < 0:
        raise InvalidArgumentError("position must be nonnegative")
    return rope_rotate(vec[None, :], [position], params.base)[0]


@dataclass(frozen=True)
class AttentionOutput:
    outputs: np.ndarray
    weights_available: bool = False
    weights: Optional[np.ndarray] = None
    compressed: bool = False


class ExpandedCache(NamedTuple):
    keys: np.ndarray  # rotated
    values: np.ndarray
    positions: np.ndarray  # logical positions
    owners: np.ndarray  # stored-entry index: centers 0..C-1, then locals


def expand(cache: HeadCacheState, config: CompressionConfig) -> ExpandedCache:
    """Materialize the runtime cache: LUT entries resolved to their centers, then locals.

    In ``with_pos`` mode each LUT entry is rotated at its own logical position;
    in ``without_pos`` mode every entry of a center uses the center's position.
    """
    cache.validate()
    live = cache.lut_slots != ZERO
    slots = cache.lut_slots[live]
    lut_pos = cache.lut_positions[live]
    c_keys = cache.center_norms[slots, None] * cache.center_keys[slots]
    rot_pos = lut_pos if config.position_mode == "with_pos" else cache.center_positions[slots]
    keys = np.concatenate([
        rope_rotate(c_keys, rot_pos, config.rope_base),
        rope_rotate(cache.local_keys, cache.local_positions, config.rope_base),
    ])
    values = np.concatenate([cache.center_values[slots], cache.local_values])
    positions = np.concatenate([lut_pos, cache.local_positions])
    owners = np.concatenate([slots, cache.n_centers + np.arange(cache.n_local, dtype=np.int64)])
    return ExpandedCache(keys, values, positions, owners)


def _attend(q, cache, config, position):
    q_rot = rope_rotate(as_vector(q, "q")[None, :], [position], config.rope_base)[0]
    exp = expand(cache, config)
    if exp.keys.shape[0] == 0:
        raise StateError("cache is empty")
    out, w = attention_row(q_rot, exp.keys, exp.values)
    return out, w, exp


def attend_expanded(q, cache: HeadCacheState, config: CompressionConfig, position: Optional[int] = None) -> np.ndarray:
    """Attention of ``q`` over the expanded cache.

    ``position`` defaults to the latest logical token (``cache.seen - 1``).
    """
    pos = cache.seen - 1 if position is None else position
    return _attend(q, cache, config, pos)[0]


def _check_blocks(q_block, k_block, v_block):
    q = as_matrix(q_block, "q_block")
    k = as_matrix(k_block, "k_block")
    v = as_matrix(v_block, "v_block")
    if not q.shape == k.shape == v.shape:
        raise InvalidArgumentError(f"block shapes differ: {q.shape}, {k.shape}, {v.shape}")
    if q.shape[0] < 1:
        raise InvalidArgumentError("prefill needs at least one token")
    return q, k, v


def causal_outputs(q_rot: np.ndarray, k_rot: np.ndarray, v: np.ndarray, with_weights: bool = False):
    """Exact row-by-row causal attention over already-rotated blocks."""
    n = q_rot.shape[0]
    out = np.empty_like(v)
    weights = np.zeros((n, n)) if with_weights else None
    for i in range(n):
        out[i], w = attention_row(q_rot[i], k_rot[: i + 1], v[: i + 1])
        if weights is not None:
            weights[i, : i + 1] = w
    return out, weights


def prefill_pass(q_block, k_block, v_block, config: CompressionConfig, *, with_outputs: bool = True, with_weights: bool = False):
    """Policy-independent part of prefill: outputs, initial scores, uncompressed cache."""
    q, k, v = _check_blocks(q_block, k_block, v_block)
    pos = np.arange(q.shape[0])
    q_rot = rope_rotate(q, pos, config.rope_base)
    k_rot = rope_rotate(k, pos, config.rope_base)
    scores = prefill_scores(q_rot, k_rot, config.l_win, config.tile_size)
    out, weights = (None, None)
    if with_outputs:
        out, weights = causal_outputs(q_rot, k_rot, v, with_weights)
    return out, weights, HeadCacheState.from_tokens(k, v), scores


def prefill(q_block, k_block, v_block, policy, config: CompressionConfig, *, with_outputs: bool = True, with_weights: bool = False):
    """Full causal attention over the prompt, then one compression by ``policy``.

    Returns ``(AttentionOutput, HeadCacheState, ScoreState)``. Prompts no
    longer than the budget come back uncompressed (``output.compressed`` is
    False).
    """
    config = policy.resolve(config)
    out, weights, cache, scores = prefill_pass(q_block, k_block, v_block, config, with_outputs=with_outputs, with_weights=with_weights)
    cache, scores = policy.compress_prefill(cache, scores, config)
    result = AttentionOutput(out, weights is not None, weights, cache.compressed)
    return result, cache, scores


class DecodeResult(NamedTuple):
    output: np.ndarray
    cache: HeadCacheState
    scores: ScoreState
    weights: np.ndarray  # over the expanded entries, before compression
    positions: np.ndarray  # logical position of each expanded entry
    stored_before_compression: int


def decode_step_detailed(q, k, v, cache, scores, policy, config: CompressionConfig) -> DecodeResult:
    if cache is None or scores is None or cache.seen == 0:
        raise StateError("decode_step called before prefill")
    config = policy.resolve(config)
    if len(scores) != cache.n_stored:
        raise StateError(f"score state tracks {len(scores)} entries, cache stores {cache.n_stored}")
    cache = cache.with_token(k, v)
    scores = scores.extended(1)
    out, w, exp = _attend(q, cache, config, cache.seen - 1)
    row = np.bincount(exp.owners, weights=w, minlength=cache.n_stored)
    scores = update_scores_decode(row, scores)
    stored = cache.n_stored
    cache, scores = policy.compress_decode(cache, scores, config)
    return DecodeResult(out, cache, scores, w, exp.positions, stored)


def decode_step(q, k, v, cache, scores, policy, config: CompressionConfig):
    """Append one token, attend over the expanded cache, update scores, compress.

    Returns ``(output, cache, scores)``; inputs are not modified.
    """
    r = decode_step_detailed(q, k, v, cache, scores, policy, config)
    return r.output, r.cache, r.scores
