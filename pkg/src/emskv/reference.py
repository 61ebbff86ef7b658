"""Dense full-cache causal attention, the trusted reference for every comparison."""

from __future__ import annotations

import numpy as np

from .attention import rope_rotate
from .numerics import as_matrix, attention_row


def dense_attention_rows(q, k, v, rows, rope_base=10000.0):
    """Causal attention outputs and weights for selected query rows.

    Row ``t`` attends over tokens ``0..t`` of the full, uncompressed sequence.
    Returns ``(outputs, weights)`` where ``weights[j]`` has length ``rows[j] + 1``.
    """
    q = as_matrix(q, "q")
    k = as_matrix(k, "k")
    v = as_matrix(v, "v")
    pos = np.arange(k.shape[0])
    k_rot = rope_rotate(k, pos, rope_base)
    outs, weights = [], []
    for t in rows:
        q_rot = rope_rotate(q[t : t + 1], [t], rope_base)[0]
        o, w = attention_row(q_rot, k_rot[: t + 1], v[: t + 1])
        outs.append(o)
        weights.append(w)
    return np.array(outs).reshape(len(outs), v.shape[1]), weights


def dense_causal_attention(q, k, v, rope_base=10000.0) -> np.ndarray:
    """Outputs for every row of a full causal pass."""
    n = as_matrix(q, "q").shape[0]
    return dense_attention_rows(q, k, v, range(n), rope_base)[0]
