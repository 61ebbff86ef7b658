"""Budgeted KV-cache compression by eviction plus similarity merging.

The package simulates single-head attention over recorded or synthetic
Q/K/V traces and compares compression policies against a dense reference.
"""

from .analysis import redundancy_matrix, redundancy_rate, sparsity_rate
from .attention import decode_step, decode_step_detailed, prefill, prefill_pass
from .cache import ZERO, HeadCacheState
from .config import CompressionConfig
from .errors import (
    ConfigError,
    CorruptionError,
    DegenerateInputError,
    EMSError,
    InvalidArgumentError,
    StateError,
    TraceFormatError,
)
from .harness import MetricsReport, emit_report, run_experiment
from .policies import EMSPolicy, FullPolicy, H2OPolicy, SnapKVPolicy, StreamingLLMPolicy, make_policy
from .scoring import ScoreState, combine_glo_loc, prefill_scores
from .synth import gen_synthetic
from .trace import Trace, load_trace, save_trace

__all__ = [
    "CompressionConfig", "ConfigError", "CorruptionError", "DegenerateInputError", "EMSError",
    "EMSPolicy", "FullPolicy", "H2OPolicy", "HeadCacheState", "InvalidArgumentError",
    "MetricsReport", "ScoreState", "SnapKVPolicy", "StateError", "StreamingLLMPolicy", "Trace",
    "TraceFormatError", "ZERO", "combine_glo_loc", "decode_step", "decode_step_detailed",
    "emit_report", "gen_synthetic", "load_trace", "make_policy", "prefill", "prefill_pass",
    "prefill_scores", "redundancy_matrix", "redundancy_rate", "run_experiment", "save_trace",
    "sparsity_rate",
]
