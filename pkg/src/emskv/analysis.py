"""Head-level sparsity and redundancy diagnostics on raw (pre-rotary) tokens."""

from __future__ import annotations

import warnings
from fractions import Fraction

import numpy as np

from .errors import DegenerateInputError, DegenerateTokenWarning, InvalidArgumentError
from .numerics import as_matrix, as_vector, pairwise_cosine


def _warn_zero_tokens(k: np.ndarray, v: np.ndarray) -> None:
    zero = ((k * k).sum(axis=1) == 0) | ((v * v).sum(axis=1) == 0)
    if zero.any():
        warnings.warn(
            f"{int(zero.sum())} zero-norm token(s); their redundancy is taken as 0",
            DegenerateTokenWarning,
            stacklevel=3,
        )


def redundancy_between(k_a, v_a, k_b, v_b) -> np.ndarray:
    """Key-value redundancy ``cos(k_a, k_b) * cos(v_a, v_b)`` for all row pairs."""
    return pairwise_cosine(k_a, k_b) * pairwise_cosine(v_a, v_b)


def redundancy_matrix(k_raw, v_raw) -> np.ndarray:
    """Full N x N redundancy matrix of a head's raw tokens.

    Zero-norm tokens have redundancy 0 with every token, including themselves.
    """
    k = as_matrix(k_raw, "k_raw")
    v = as_matrix(v_raw, "v_raw")
    if k.shape[0] != v.shape[0]:
        raise InvalidArgumentError(f"token count mismatch: {k.shape[0]} vs {v.shape[0]}")
    _warn_zero_tokens(k, v)
    return redundancy_between(k, v, k, v)


def sparsity_rate(score, zeta: float) -> float:
    """Fraction of tokens not needed to reach ``zeta`` of the total score mass."""
    s = as_vector(score, "score")
    if s.size == 0:
        raise InvalidArgumentError("empty score")
    if (s < 0).any():
        raise InvalidArgumentError("score must be nonnegative")
    if not 0.0 < zeta <= 1.0:
        raise InvalidArgumentError(f"zeta must lie in (0, 1], got {zeta}")
    if not s.sum() > 0:
        raise DegenerateInputError("score has no mass")
    # Floats are dyadic rationals, so the covering count can be decided
    # exactly; float prefix sums misjudge the boundary when tail tokens are tiny.
    ranked = [Fraction(x) for x in np.sort(s)[::-1].tolist()]
    target = Fraction(zeta) * sum(ranked)
    acc = Fraction(0)
    n_k = s.size
    for i, x in enumerate(ranked, start=1):
        acc += x
        if acc >= target:
            n_k = i
            break
    return 1.0 - n_k / s.size


def redundancy_rate(R, tau: float) -> float:
    """Fraction of tokens whose best predecessor redundancy reaches ``tau``.

    Only strict predecessors count, so the first token contributes 0.
    """
    r = as_matrix(R, "R")
    n = r.shape[0]
    if n < 1 or r.shape[1] != n:
        raise InvalidArgumentError(f"R must be square and non-empty, got {r.shape}")
    lower = np.where(np.tri(n, k=-1, dtype=bool), r, -np.inf)
    best = lower.max(axis=1)
    return float((best >= tau).sum()) / n


def head_redundancy_rate(k_raw, v_raw, tau: float, block: int = 512) -> float:
    """Same as ``redundancy_rate(redundancy_matrix(k, v), tau)`` in O(block * N) memory."""
    k = as_matrix(k_raw, "k_raw")
    v = as_matrix(v_raw, "v_raw")
    n = k.shape[0]
    if n < 1:
        raise InvalidArgumentError("need at least one token")
    _warn_zero_tokens(k, v)
    hits = 0
    for a in range(0, n, block):
        b = min(a + block, n)
        r = redundancy_between(k[a:b], v[a:b], k[:b], v[:b])
        rows = np.arange(a, b)[:, None]
        cols = np.arange(b)[None, :]
        best = np.where(cols < rows, r, -np.inf).max(axis=1)
        hits += int((best >= tau).sum())
    return hits / n
