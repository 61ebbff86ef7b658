"""Global-Local token importance.

The global score is the column sum of the causal attention matrix, the local
score the column sum over the last ``l_win`` query rows only. Both are
computed in a tiled two-pass scheme: pass one finds each row's log-sum-exp
with an online softmax, pass two re-materializes one tile of probabilities
at a time and folds it into the column sums. Nothing of size N x N is ever
allocated.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import DegenerateInputError, InvalidArgumentError
from .numerics import as_matrix, as_vector, mean_pool_1d

DEFAULT_TILE = 128


@dataclass(frozen=True)
class ScoreState:
    """Per-head score accumulators, one entry per stored cache entry.

    Ordering matches the cache: class centers first, then exact (local) tokens.
    """

    s_glo: np.ndarray
    s_loc_past: np.ndarray
    s_loc_cur: np.ndarray
    l_win: int
    window_fill: int = 0

    def __post_init__(self):
        n = self.s_glo.shape[0]
        if self.s_loc_past.shape != (n,) or self.s_loc_cur.shape != (n,):
            raise InvalidArgumentError("score vectors must share one length")
        if not 0 <= self.window_fill < self.l_win:
            raise InvalidArgumentError(f"window_fill {self.window_fill} outside [0, {self.l_win})")

    def __len__(self) -> int:
        return self.s_glo.shape[0]

    @property
    def s_loc(self) -> np.ndarray:
        """Effective local score: past window plus the window being filled."""
        return self.s_loc_past + self.s_loc_cur

    def extended(self, count: int) -> "ScoreState":
        """Append ``count`` zero entries (new tokens entering the cache)."""
        z = np.zeros(count)
        return replace(
            self,
            s_glo=np.concatenate([self.s_glo, z]),
            s_loc_past=np.concatenate([self.s_loc_past, z]),
            s_loc_cur=np.concatenate([self.s_loc_cur, z]),
        )

    def select(self, idx) -> "ScoreState":
        idx = np.asarray(idx, dtype=np.int64)
        return replace(self, s_glo=self.s_glo[idx], s_loc_past=self.s_loc_past[idx], s_loc_cur=self.s_loc_cur[idx])

    def stacked(self) -> np.ndarray:
        """(n, 3) view of the three accumulators, for merging mass."""
        return np.stack([self.s_glo, self.s_loc_past, self.s_loc_cur], axis=1)

    @classmethod
    def from_stacked(cls, arr: np.ndarray, l_win: int, window_fill: int) -> "ScoreState":
        return cls(arr[:, 0].copy(), arr[:, 1].copy(), arr[:, 2].copy(), l_win, window_fill)


def _check_qk(q_block, k_block) -> tuple[np.ndarray, np.ndarray]:
    q = as_matrix(q_block, "q_block")
    k = as_matrix(k_block, "k_block")
    if q.shape != k.shape:
        raise InvalidArgumentError(f"q/k shape mismatch: {q.shape} vs {k.shape}")
    if q.shape[0] < 1:
        raise InvalidArgumentError("need at least one token")
    return q, k


def _tile_logits(q, k, a, b, c, e, scale):
    s = (q[a:b] @ k[c:e].T) * scale
    if e > a:  # tile touches the diagonal
        rows = np.arange(a, b)[:, None]
        cols = np.arange(c, e)[None, :]
        s = np.where(cols <= rows, s, -np.inf)
    return s


def row_logsumexp(q: np.ndarray, k: np.ndarray, first_row: int = 0, tile: int = DEFAULT_TILE) -> np.ndarray:
    """Causal log-sum-exp of rows ``first_row..N-1`` via online softmax."""
    n, d = q.shape
    scale = 1.0 / np.sqrt(d)
    lse = np.empty(n - first_row)
    for a in range(first_row, n, tile):
        b = min(a + tile, n)
        m = np.full(b - a, -np.inf)
        acc = np.zeros(b - a)
        for c in range(0, b, tile):
            e = min(c + tile, b)
            s = _tile_logits(q, k, a, b, c, e, scale)
            m_new = np.maximum(m, s.max(axis=1))
            acc = acc * np.exp(m - m_new) + np.exp(s - m_new[:, None]).sum(axis=1)
            m = m_new
        lse[a - first_row : b - first_row] = m + np.log(acc)
    return lse


def _column_mass(q, k, lse, first_row, tile):
    n, d = q.shape
    scale = 1.0 / np.sqrt(d)
    out = np.zeros(n)
    for a in range(first_row, n, tile):
        b = min(a + tile, n)
        row_lse = lse[a - first_row : b - first_row, None]
        for c in range(0, b, tile):
            e = min(c + tile, b)
            p = np.exp(_tile_logits(q, k, a, b, c, e, scale) - row_lse)
            out[c:e] += p.sum(axis=0)
    return out


def global_score_prefill(q_block, k_block, tile: int = DEFAULT_TILE) -> np.ndarray:
    """Column sums of the causal attention matrix.

    ``q_block``/``k_block`` are (N, d) and must already be rotated if the
    model uses rotary positions.
    """
    q, k = _check_qk(q_block, k_block)
    lse = row_logsumexp(q, k, 0, tile)
    return _column_mass(q, k, lse, 0, tile)


def local_score_prefill(q_block, k_block, l_win: int, tile: int = DEFAULT_TILE) -> np.ndarray:
    """Column sums over the last ``l_win`` query rows only."""
    q, k = _check_qk(q_block, k_block)
    n = q.shape[0]
    if not 1 <= l_win <= n:
        raise InvalidArgumentError(f"l_win must lie in [1, {n}], got {l_win}")
    first = n - l_win
    lse = row_logsumexp(q, k, first, tile)
    return _column_mass(q, k, lse, first, tile)


def prefill_scores(q_block, k_block, l_win: int, tile: int = DEFAULT_TILE) -> ScoreState:
    """Initial score state for a prompt: one log-sum-exp pass shared by both sums.

    If the prompt is shorter than ``l_win`` the whole prompt is the window.
    """
    q, k = _check_qk(q_block, k_block)
    n = q.shape[0]
    lse = row_logsumexp(q, k, 0, tile)
    s_glo = _column_mass(q, k, lse, 0, tile)
    first = max(0, n - l_win)
    s_loc = _column_mass(q, k, lse[first:], first, tile)
    return ScoreState(s_glo, s_loc, np.zeros(n), l_win, 0)


def combine_glo_loc(s_glo, s_loc) -> np.ndarray:
    """Mean-align the global score to the local one, then take the element-wise max."""
    g = as_vector(s_glo, "s_glo")
    loc = as_vector(s_loc, "s_loc")
    if g.shape != loc.shape:
        raise InvalidArgumentError(f"length mismatch: {g.size} vs {loc.size}")
    g_sum = g.sum()
    if not g_sum > 0:
        raise DegenerateInputError("global score has no mass; cannot align")
    return np.maximum(g * (loc.sum() / g_sum), loc)


def update_scores_decode(attn_row, state: ScoreState) -> ScoreState:
    """Fold one decode query's attention row into the accumulators.

    When the current window has collected ``l_win`` rows it becomes the past
    window and a fresh current window starts.
    """
    row = as_vector(attn_row, "attn_row")
    if row.shape[0] != len(state):
        raise InvalidArgumentError(f"attention row has {row.shape[0]} entries, state has {len(state)}")
    s_glo = state.s_glo + row
    cur = state.s_loc_cur + row
    past = state.s_loc_past
    fill = state.window_fill + 1
    if fill == state.l_win:
        past, cur, fill = cur, np.zeros_like(cur), 0
    return ScoreState(s_glo, past, cur, state.l_win, fill)


def importance(state: ScoreState, score_mode: str = "glo_loc") -> np.ndarray:
    """Unpooled importance used for ranking centers and weighting merges."""
    if score_mode == "glo":
        return state.s_glo.copy()
    if score_mode == "loc":
        return state.s_loc
    return combine_glo_loc(state.s_glo, state.s_loc)


def effective_score(state: ScoreState, kernel_size: int, score_mode: str = "glo_loc") -> np.ndarray:
    return mean_pool_1d(importance(state, score_mode), kernel_size)
