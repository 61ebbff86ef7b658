"""Dense numerical primitives shared by every module.

All computation is float64. Reductions use elementwise products followed by
``ndarray.sum`` so that the same inputs always produce the same bits,
independent of memory alignment or BLAS kernel selection.
"""

from __future__ import annotations

import numpy as np

from .errors import DegenerateInputError, InvalidArgumentError


def as_vector(x, name: str = "vector") -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 1:
        raise InvalidArgumentError(f"{name} must be 1-D, got shape {arr.shape}")
    return arr


def as_matrix(x, name: str = "matrix") -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 2:
        raise InvalidArgumentError(f"{name} must be 2-D, got shape {arr.shape}")
    return arr


def stable_softmax_row(row) -> np.ndarray:
    """Softmax of a single row using max-subtraction."""
    x = as_vector(row, "row")
    if x.size == 0:
        raise InvalidArgumentError("softmax of an empty row")
    e = np.exp(x - x.max())
    return e / e.sum()


def cosine_similarity(a, b) -> float:
    a = as_vector(a, "a")
    b = as_vector(b, "b")
    if a.shape != b.shape:
        raise InvalidArgumentError(f"length mismatch: {a.size} vs {b.size}")
    na = np.sqrt((a * a).sum())
    nb = np.sqrt((b * b).sum())
    if na == 0.0 or nb == 0.0:
        raise DegenerateInputError("cosine similarity of a zero-norm vector")
    return float(np.clip((a * b).sum() / (na * nb), -1.0, 1.0))


def pairwise_cosine(a, b) -> np.ndarray:
    """Cosine similarity between every row of ``a`` and every row of ``b``.

    Zero-norm rows get similarity 0 with everything (callers that care about
    that case warn on their own).
    """
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    na = np.sqrt((a * a).sum(axis=1))
    nb = np.sqrt((b * b).sum(axis=1))
    ua = np.divide(a, na[:, None], out=np.zeros_like(a), where=na[:, None] > 0)
    ub = np.divide(b, nb[:, None], out=np.zeros_like(b), where=nb[:, None] > 0)
    return np.clip(ua @ ub.T, -1.0, 1.0)


def mean_pool_1d(s, kernel_size: int) -> np.ndarray:
    """Centered moving average with truncated windows at the boundaries.

    Entry ``i`` is the mean of ``s[max(0, i-h) : i+h+1]`` where
    ``h = kernel_size // 2``; edge windows are averaged over their actual width.
    """
    x = as_vector(s, "s")
    if kernel_size < 1 or kernel_size % 2 == 0:
        raise InvalidArgumentError(f"kernel_size must be odd and positive, got {kernel_size}")
    if kernel_size == 1:
        return x.copy()
    n = x.size
    h = kernel_size // 2
    total = np.zeros(n)
    count = np.zeros(n)
    for off in range(-h, h + 1):
        lo = max(0, -off)
        hi = min(n, n - off)
        if lo >= hi:
            continue
        total[lo:hi] += x[lo + off : hi + off]
        count[lo:hi] += 1.0
    return total / count


def attention_row(q_rot: np.ndarray, k_rot: np.ndarray, v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Single-query softmax attention; returns ``(output, weights)``.

    ``q_rot`` and ``k_rot`` must already carry positional rotation.
    """
    scale = 1.0 / np.sqrt(q_rot.shape[-1])
    logits = (k_rot * q_rot).sum(axis=1) * scale
    w = stable_softmax_row(logits)
    out = (w[:, None] * v).sum(axis=0)
    return out, w


def top_k_indices(score: np.ndarray, k: int) -> np.ndarray:
    """Indices of the ``k`` largest entries, ties resolved toward the lower index.

    Returned in ranking order (best first).
    """
    order = np.argsort(-np.asarray(score, dtype=np.float64), kind="stable")
    return order[: max(0, k)]
