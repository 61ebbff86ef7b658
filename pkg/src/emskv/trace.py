"""KVTR binary trace format.

Layout (little-endian)::

    b"KVTR"  version:u32  num_heads:u32  head_dim:u32  step_count:u32
    per step:
        kind:u8 (0 = prefill, 1 = decode)  token_count:u32
        Q, K, V: each token_count x num_heads x head_dim float32, row-major

Values are widened to float64 on load and narrowed back on save, so a
load/save round trip reproduces the file byte for byte.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgumentError, TraceFormatError

MAGIC = b"KVTR"
VERSION = 1
PREFILL, DECODE = 0, 1
_HEADER = struct.Struct("<4sIIII")
_STEP = struct.Struct("<BI")
_F32 = np.dtype("<f4")


@dataclass
class TraceStep:
    kind: int
    q: np.ndarray  # (tokens, heads, head_dim), float64
    k: np.ndarray
    v: np.ndarray

    @property
    def token_count(self) -> int:
        return self.q.shape[0]


@dataclass
class Trace:
    num_heads: int
    head_dim: int
    steps: list[TraceStep] = field(default_factory=list)

    def validate(self) -> None:
        if not self.steps or self.steps[0].kind != PREFILL:
            raise InvalidArgumentError("trace must start with exactly one prefill step")
        shape_tail = (self.num_heads, self.head_dim)
        for i, st in enumerate(self.steps):
            if i and st.kind != DECODE:
                raise InvalidArgumentError(f"step {i}: only the first step may be a prefill")
            if st.kind == DECODE and st.token_count != 1:
                raise InvalidArgumentError(f"step {i}: decode steps carry exactly one token")
            for name in ("q", "k", "v"):
                arr = getattr(st, name)
                if arr.ndim != 3 or arr.shape[1:] != shape_tail or arr.shape[0] != st.token_count:
                    raise InvalidArgumentError(f"step {i}: {name} has shape {arr.shape}")
            if st.token_count < 1:
                raise InvalidArgumentError(f"step {i}: empty step")

    @property
    def prefill(self) -> TraceStep:
        return self.steps[0]

    @property
    def decode_steps(self) -> list[TraceStep]:
        return self.steps[1:]

    @property
    def prompt_tokens(self) -> int:
        return self.steps[0].token_count

    def head_prompt(self, h: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        st = self.steps[0]
        return st.q[:, h, :], st.k[:, h, :], st.v[:, h, :]

    def head_decode(self, h: int) -> list[tuple[np.ndarray, np.ndarray, np.ndarray]]:
        return [(st.q[0, h], st.k[0, h], st.v[0, h]) for st in self.steps[1:]]

    def head_all_tokens(self, h: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Prompt and decode tokens of one head concatenated in logical order."""
        q = np.concatenate([st.q[:, h, :] for st in self.steps])
        k = np.concatenate([st.k[:, h, :] for st in self.steps])
        v = np.concatenate([st.v[:, h, :] for st in self.steps])
        return q, k, v


def trace_to_bytes(trace: Trace) -> bytes:
    trace.validate()
    parts = [_HEADER.pack(MAGIC, VERSION, trace.num_heads, trace.head_dim, len(trace.steps))]
    for st in trace.steps:
        parts.append(_STEP.pack(st.kind, st.token_count))
        for arr in (st.q, st.k, st.v):
            parts.append(np.ascontiguousarray(arr, dtype=_F32).tobytes())
    return b"".join(parts)


def trace_from_bytes(data: bytes) -> Trace:
    if len(data) < _HEADER.size:
        raise TraceFormatError(f"truncated header: {len(data)} of {_HEADER.size} bytes", len(data))
    magic, version, heads, dim, n_steps = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise TraceFormatError(f"bad magic {magic!r}", 0)
    if version != VERSION:
        raise TraceFormatError(f"unsupported version {version}", 4)
    if heads < 1 or dim < 1:
        raise TraceFormatError(f"invalid shape: {heads} heads, head_dim {dim}", 8)
    off = _HEADER.size
    steps = []
    for i in range(n_steps):
        if off + _STEP.size > len(data):
            raise TraceFormatError(f"truncated header of step {i}", off)
        kind, count = _STEP.unpack_from(data, off)
        if kind not in (PREFILL, DECODE):
            raise TraceFormatError(f"step {i}: unknown kind {kind}", off)
        off += _STEP.size
        block = count * heads * dim
        nbytes = block * _F32.itemsize
        blocks = []
        for name in ("Q", "K", "V"):
            if off + nbytes > len(data):
                raise TraceFormatError(f"step {i}: truncated {name} block", off)
            arr = np.frombuffer(data, dtype=_F32, count=block, offset=off)
            blocks.append(arr.astype(np.float64).reshape(count, heads, dim))
            off += nbytes
        steps.append(TraceStep(kind, *blocks))
    if off != len(data):
        raise TraceFormatError(f"{len(data) - off} trailing bytes", off)
    trace = Trace(heads, dim, steps)
    try:
        trace.validate()
    except InvalidArgumentError as exc:
        raise TraceFormatError(str(exc), _HEADER.size) from None
    return trace


def load_trace(path: str | os.PathLike) -> Trace:
    with open(path, "rb") as fh:
        return trace_from_bytes(fh.read())


def save_trace(trace: Trace, path: str | os.PathLike) -> None:
    data = trace_to_bytes(trace)
    with open(path, "wb") as fh:
        fh.write(data)
