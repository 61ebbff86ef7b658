"""Synthetic attention workloads.

* ``random``: i.i.d. standard-normal Q/K/V.
* ``redundant``: tokens are slightly perturbed copies of a small pool of
  base tokens, so most tokens have a near-duplicate predecessor.
* ``needle``: a random haystack with one token whose key points along a
  distinctive direction. The last ``question_len`` prompt queries lean
  weakly toward that direction and every decode query points at it, a
  stand-in for a retrieval question at the end of a long prompt.

The needle direction lives in the two lowest-frequency rotary pairs (the last
four channels), which barely rotate over a few thousand positions, so the
alignment survives rotary embedding without the generator knowing its base.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import InvalidArgumentError
from .trace import DECODE, PREFILL, Trace, TraceStep

KINDS = ("random", "redundant", "needle")

NEEDLE_KEY_GAIN = 12.0
QUESTION_GAIN = 4.0
DECODE_QUERY_GAIN = 16.0
HAYSTACK_QUERY_SCALE = 0.5
REDUNDANT_NOISE = 0.05


def _f32(x: np.ndarray) -> np.ndarray:
    # traces are stored as float32; generate exactly representable values
    return x.astype(np.float32).astype(np.float64)


def _pack(q, k, v, n_prompt: int, heads: int, dim: int) -> Trace:
    q, k, v = _f32(q), _f32(k), _f32(v)
    steps = [TraceStep(PREFILL, q[:n_prompt], k[:n_prompt], v[:n_prompt])]
    for t in range(n_prompt, q.shape[0]):
        steps.append(TraceStep(DECODE, q[t : t + 1], k[t : t + 1], v[t : t + 1]))
    trace = Trace(heads, dim, steps)
    trace.validate()
    return trace


def needle_position(tokens: int, depth: float, question_len: int) -> int:
    """Logical position of the needle for a given relative depth in [0, 1]."""
    return int(round(depth * (tokens - question_len - 1)))


def gen_synthetic(
    kind: str,
    seed: int,
    tokens: int,
    heads: int = 1,
    dim: int = 64,
    *,
    decode_steps: int = 16,
    depth: float = 0.5,
    level: float = 0.8,
    question_len: int = 16,
) -> Trace:
    """Deterministic synthetic trace: the same arguments give a bit-identical trace."""
    if kind not in KINDS:
        raise InvalidArgumentError(f"unknown synthetic kind {kind!r}; choose from {KINDS}")
    if tokens < 1 or heads < 1 or dim < 2 or dim % 2 or decode_steps < 0:
        raise InvalidArgumentError(
            f"invalid sizes: tokens={tokens} heads={heads} dim={dim} decode_steps={decode_steps}"
        )
    rng = np.random.default_rng(seed)
    total = tokens + decode_steps
    shape = (total, heads, dim)

    if kind == "random":
        q, k, v = (rng.standard_normal(shape) for _ in range(3))
        return _pack(q, k, v, tokens, heads, dim)

    if kind == "redundant":
        if not 0.0 <= level < 1.0:
            raise InvalidArgumentError(f"level must lie in [0, 1), got {level}")
        n_base = max(1, math.floor((1.0 - level) * tokens))
        q = rng.standard_normal(shape)
        k = np.empty(shape)
        v = np.empty(shape)
        for h in range(heads):
            base_k = rng.standard_normal((n_base, dim))
            base_v = rng.standard_normal((n_base, dim))
            prompt = np.concatenate([np.arange(n_base), rng.integers(0, n_base, tokens - n_base)])
            rng.shuffle(prompt)
            assign = np.concatenate([prompt, rng.integers(0, n_base, decode_steps)])
            k[:, h] = base_k[assign] + REDUNDANT_NOISE * rng.standard_normal((total, dim))
            v[:, h] = base_v[assign] + REDUNDANT_NOISE * rng.standard_normal((total, dim))
        return _pack(q, k, v, tokens, heads, dim)

    # needle
    if not 0.0 <= depth <= 1.0:
        raise InvalidArgumentError(f"depth must lie in [0, 1], got {depth}")
    if tokens < question_len + 2 or question_len < 1:
        raise InvalidArgumentError(f"need tokens >= question_len + 2, got tokens={tokens}, question_len={question_len}")
    if dim < 8:
        raise InvalidArgumentError("needle traces need head_dim >= 8")
    p = needle_position(tokens, depth, question_len)
    q = HAYSTACK_QUERY_SCALE * rng.standard_normal(shape)
    k = rng.standard_normal(shape)
    v = rng.standard_normal(shape)
    for h in range(heads):
        u = np.zeros(dim)
        u[dim - 4 :] = rng.standard_normal(4)
        u /= np.linalg.norm(u)
        k[p, h, dim - 4 :] = NEEDLE_KEY_GAIN * u[dim - 4 :]
        q[tokens - question_len : tokens, h] = QUESTION_GAIN * u
        q[tokens:, h] = DECODE_QUERY_GAIN * u
    return _pack(q, k, v, tokens, heads, dim)
