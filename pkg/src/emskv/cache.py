"""Per-head compressed KV store.

A cache holds two regions:

* class centers: unit-norm raw keys with a separate norm scalar, values, and
  the logical position of the token that founded the center;
* exact tokens: raw keys/values stored verbatim. For the merge policy these
  are the local window; evict-only policies keep all their survivors here.

The position look-up-table (LUT) lists every logical token represented by a
center, as ``(position, slot)`` pairs sorted by position. ``slot == ZERO``
marks a token absorbed by the zero class, which expands to nothing.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace

import numpy as np

from .errors import CorruptionError, InvalidArgumentError

ZERO = -1


@dataclass(frozen=True)
class TokenBlock:
    keys: np.ndarray
    values: np.ndarray
    positions: np.ndarray

    def __len__(self) -> int:
        return self.keys.shape[0]

    def take(self, idx) -> "TokenBlock":
        idx = np.asarray(idx, dtype=np.int64)
        return TokenBlock(self.keys[idx], self.values[idx], self.positions[idx])


def _empty(d: int) -> np.ndarray:
    return np.zeros((0, d))


def _empty_int() -> np.ndarray:
    return np.zeros(0, dtype=np.int64)


@dataclass(frozen=True)
class HeadCacheState:
    head_dim: int
    center_keys: np.ndarray
    center_norms: np.ndarray
    center_values: np.ndarray
    center_positions: np.ndarray
    lut_positions: np.ndarray
    lut_slots: np.ndarray
    local_keys: np.ndarray
    local_values: np.ndarray
    local_positions: np.ndarray
    compressed: bool = False
    seen: int = 0  # logical tokens observed so far; the next token's position

    @classmethod
    def from_tokens(cls, keys, values, positions=None) -> "HeadCacheState":
        """Uncompressed cache holding every token exactly."""
        k = np.asarray(keys, dtype=np.float64)
        v = np.asarray(values, dtype=np.float64)
        if k.ndim != 2 or k.shape != v.shape:
            raise InvalidArgumentError(f"keys/values must be matching 2-D blocks, got {k.shape} and {v.shape}")
        n, d = k.shape
        pos = np.arange(n, dtype=np.int64) if positions is None else np.asarray(positions, dtype=np.int64)
        return cls(
            head_dim=d,
            center_keys=_empty(d),
            center_norms=np.zeros(0),
            center_values=_empty(d),
            center_positions=_empty_int(),
            lut_positions=_empty_int(),
            lut_slots=_empty_int(),
            local_keys=k,
            local_values=v,
            local_positions=pos,
            compressed=False,
            seen=int(pos[-1]) + 1 if n else 0,
        )

    @property
    def n_centers(self) -> int:
        return self.center_keys.shape[0]

    @property
    def n_local(self) -> int:
        return self.local_keys.shape[0]

    @property
    def n_stored(self) -> int:
        """Stored entries: class centers plus exact tokens."""
        return self.n_centers + self.n_local

    @property
    def n_expanded(self) -> int:
        """Entries attended over at computation time (zero class excluded)."""
        return int((self.lut_slots != ZERO).sum()) + self.n_local

    def locals_block(self) -> TokenBlock:
        return TokenBlock(self.local_keys, self.local_values, self.local_positions)

    def center_raw_keys(self) -> np.ndarray:
        return self.center_keys * self.center_norms[:, None]

    def with_token(self, k, v) -> "HeadCacheState":
        """Append one exact token at the next logical position."""
        k = np.asarray(k, dtype=np.float64).reshape(1, self.head_dim)
        v = np.asarray(v, dtype=np.float64).reshape(1, self.head_dim)
        return replace(
            self,
            local_keys=np.concatenate([self.local_keys, k]),
            local_values=np.concatenate([self.local_values, v]),
            local_positions=np.concatenate([self.local_positions, [self.seen]]).astype(np.int64),
            seen=self.seen + 1,
        )

    def keep_locals(self, idx) -> "HeadCacheState":
        idx = np.asarray(idx, dtype=np.int64)
        return replace(
            self,
            local_keys=self.local_keys[idx],
            local_values=self.local_values[idx],
            local_positions=self.local_positions[idx],
        )

    def represented_positions(self) -> np.ndarray:
        """Logical positions that still contribute to attention."""
        return np.concatenate([self.lut_positions[self.lut_slots != ZERO], self.local_positions])

    def validate(self) -> None:
        """Raise ``CorruptionError`` if the LUT or center arrays are inconsistent."""
        c = self.n_centers
        if self.lut_slots.shape != self.lut_positions.shape:
            raise CorruptionError("LUT position/slot arrays differ in length")
        bad = (self.lut_slots < ZERO) | (self.lut_slots >= c)
        if bad.any():
            raise CorruptionError(f"LUT references nonexistent slot {int(self.lut_slots[bad][0])} (have {c} centers)")
        if self.lut_positions.size > 1 and not (np.diff(self.lut_positions) > 0).all():
            raise CorruptionError("LUT positions are not strictly increasing")
        if c and not (self.center_norms >= 0).all():
            raise CorruptionError("negative key norm")

    def drop_zero_class(self) -> "HeadCacheState":
        """Equivalent cache with zero-class entries physically removed."""
        keep = self.lut_slots != ZERO
        return replace(self, lut_positions=self.lut_positions[keep], lut_slots=self.lut_slots[keep])

    def memory_bytes(self, element_bytes: int = 4) -> int:
        """Bytes held by the stored state.

        Keys and values cost ``head_dim`` scalars per stored entry; the key
        norm and the three score accumulators cost one scalar each per stored
        entry; every LUT entry costs one scalar.
        """
        e = self.n_stored
        return element_bytes * (2 * e * self.head_dim + 4 * e + self.lut_positions.size)

    def to_dict(self) -> dict:
        return {
            "head_dim": self.head_dim,
            "compressed": self.compressed,
            "seen": self.seen,
            "centers": {
                "keys": self.center_keys.tolist(),
                "norms": self.center_norms.tolist(),
                "values": self.center_values.tolist(),
                "positions": self.center_positions.tolist(),
            },
            "lut": [[int(p), int(s)] for p, s in zip(self.lut_positions, self.lut_slots)],
            "locals": {
                "keys": self.local_keys.tolist(),
                "values": self.local_values.tolist(),
                "positions": self.local_positions.tolist(),
            },
        }


def dump_cache(cache: HeadCacheState, scores=None) -> str:
    """Diagnostic JSON dump of a cache (and optionally its score state)."""
    doc = {"cache": cache.to_dict()}
    if scores is not None:
        doc["scores"] = {
            "s_glo": scores.s_glo.tolist(),
            "s_loc_past": scores.s_loc_past.tolist(),
            "s_loc_cur": scores.s_loc_cur.tolist(),
            "window_fill": scores.window_fill,
            "l_win": scores.l_win,
        }
    return json.dumps(doc, indent=1)


def load_cache_dump(text: str) -> HeadCacheState:
    doc = json.loads(text)["cache"]
    d = doc["head_dim"]

    def mat(x):
        return np.asarray(x, dtype=np.float64).reshape(-1, d)

    lut = np.asarray(doc["lut"], dtype=np.int64).reshape(-1, 2)
    return HeadCacheState(
        head_dim=d,
        center_keys=mat(doc["centers"]["keys"]),
        center_norms=np.asarray(doc["centers"]["norms"], dtype=np.float64),
        center_values=mat(doc["centers"]["values"]),
        center_positions=np.asarray(doc["centers"]["positions"], dtype=np.int64),
        lut_positions=lut[:, 0].copy(),
        lut_slots=lut[:, 1].copy(),
        local_keys=mat(doc["locals"]["keys"]),
        local_values=mat(doc["locals"]["values"]),
        local_positions=np.asarray(doc["locals"]["positions"], dtype=np.int64),
        compressed=doc["compressed"],
        seen=doc["seen"],
    )
