"""Experiment orchestration: run policies against the full-cache reference.

Prefill outputs are identical for every policy (compression happens after
the prompt is attended), so errors are measured on decode steps only.
"""

from __future__ import annotations

import csv
import io
import json
import os
from dataclasses import dataclass, field
from typing import Any, Optional, Sequence

import numpy as np

from .analysis import head_redundancy_rate, sparsity_rate
from .attention import decode_step_detailed, prefill_pass
from .config import CompressionConfig
from .policies import Policy
from .reference import dense_attention_rows
from .scoring import importance
from .trace import Trace

SCHEMA_VERSION = 1

CSV_COLUMNS = [
    "policy",
    "head",
    "decode_steps",
    "mean_l2_error",
    "max_l2_error",
    "mean_cos_error",
    "argmax_match_rate",
    "ref_argmax_retained_rate",
    "needle_retained",
    "max_stored_entries",
    "final_stored_entries",
    "final_expanded_entries",
    "final_bytes",
    "sparsity_rate",
    "redundancy_rate",
]

_ENGINE_FIELDS = ("l_win", "rope_base", "tile_size")


@dataclass
class HeadMetrics:
    head: int
    l2_error: list[float] = field(default_factory=list)
    cos_error: list[float] = field(default_factory=list)
    argmax_match: list[bool] = field(default_factory=list)
    ref_argmax_retained: list[bool] = field(default_factory=list)
    # index 0 is the state right after prefill compression
    stored_entries: list[int] = field(default_factory=list)
    expanded_entries: list[int] = field(default_factory=list)
    bytes_stored: list[int] = field(default_factory=list)

    def summary(self) -> dict:
        n = len(self.l2_error)
        return {
            "decode_steps": n,
            "mean_l2_error": float(np.mean(self.l2_error)) if n else None,
            "max_l2_error": float(np.max(self.l2_error)) if n else None,
            "mean_cos_error": float(np.mean(self.cos_error)) if n else None,
            "argmax_match_rate": float(np.mean(self.argmax_match)) if n else None,
            "ref_argmax_retained_rate": float(np.mean(self.ref_argmax_retained)) if n else None,
            "needle_retained": bool(all(self.argmax_match)) if n else None,
            "max_stored_entries": max(self.stored_entries) if self.stored_entries else None,
            "final_stored_entries": self.stored_entries[-1] if self.stored_entries else None,
            "final_expanded_entries": self.expanded_entries[-1] if self.expanded_entries else None,
            "final_bytes": self.bytes_stored[-1] if self.bytes_stored else None,
        }


@dataclass
class PolicyMetrics:
    name: str
    kind: str
    overrides: dict
    heads: list[HeadMetrics] = field(default_factory=list)

    def aggregate(self) -> dict:
        merged = HeadMetrics(head=-1)
        for h in self.heads:
            merged.l2_error += h.l2_error
            merged.cos_error += h.cos_error
            merged.argmax_match += h.argmax_match
            merged.ref_argmax_retained += h.ref_argmax_retained
        agg = merged.summary()
        agg["max_stored_entries"] = max((max(h.stored_entries) for h in self.heads if h.stored_entries), default=None)
        agg["final_stored_entries"] = sum(h.stored_entries[-1] for h in self.heads if h.stored_entries) if self.heads else None
        agg["final_expanded_entries"] = sum(h.expanded_entries[-1] for h in self.heads if h.expanded_entries) if self.heads else None
        agg["final_bytes"] = sum(h.bytes_stored[-1] for h in self.heads if h.bytes_stored) if self.heads else None
        return agg


@dataclass
class MetricsReport:
    config: dict
    trace_info: dict
    meta: dict = field(default_factory=dict)
    analysis: list[dict] = field(default_factory=list)
    policies: list[PolicyMetrics] = field(default_factory=list)

    def policy(self, name: str) -> PolicyMetrics:
        for p in self.policies:
            if p.name == name:
                return p
        raise KeyError(name)

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "meta": self.meta,
            "config": self.config,
            "trace": self.trace_info,
            "analysis": self.analysis,
            "policies": [
                {
                    "policy": p.name,
                    "kind": p.kind,
                    "overrides": p.overrides,
                    "aggregate": p.aggregate(),
                    "heads": [
                        {
                            "head": h.head,
                            "summary": h.summary(),
                            "l2_error": h.l2_error,
                            "cos_error": h.cos_error,
                            "argmax_match": h.argmax_match,
                            "ref_argmax_retained": h.ref_argmax_retained,
                            "stored_entries": h.stored_entries,
                            "expanded_entries": h.expanded_entries,
                            "bytes_stored": h.bytes_stored,
                        }
                        for h in p.heads
                    ],
                }
                for p in self.policies
            ],
        }


def _cos_error(a: np.ndarray, b: np.ndarray) -> float:
    if np.array_equal(a, b):
        return 0.0  # exact, rather than 1 - (rounded cosine)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        return 0.0 if na == nb else 1.0
    return float(1.0 - np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))


def _run_policy_head(policy, config, cache0, scores0, decode, ref_out, ref_argmax, h) -> HeadMetrics:
    cfg = policy.resolve(config)
    m = HeadMetrics(head=h)
    cache, scores = policy.compress_prefill(cache0, scores0, cfg)
    m.stored_entries.append(cache.n_stored)
    m.expanded_entries.append(cache.n_expanded)
    m.bytes_stored.append(cache.memory_bytes(cfg.element_bytes))
    for s, (q, k, v) in enumerate(decode):
        r = decode_step_detailed(q, k, v, cache, scores, policy, config)
        cache, scores = r.cache, r.scores
        diff = r.output - ref_out[s]
        m.l2_error.append(float(np.sqrt((diff * diff).sum())))
        m.cos_error.append(_cos_error(r.output, ref_out[s]))
        m.argmax_match.append(bool(int(r.positions[int(np.argmax(r.weights))]) == ref_argmax[s]))
        m.ref_argmax_retained.append(bool(ref_argmax[s] in r.positions))
        m.stored_entries.append(cache.n_stored)
        m.expanded_entries.append(cache.n_expanded)
        m.bytes_stored.append(cache.memory_bytes(cfg.element_bytes))
    return m


def run_experiment(
    trace: Trace,
    policies: Sequence[Policy],
    config: CompressionConfig,
    *,
    meta: Optional[dict] = None,
    analyze: bool = True,
) -> MetricsReport:
    """Run every policy and the full-cache reference over ``trace`` in lockstep.

    Deterministic: the same trace, policies and config give an identical report.
    """
    trace.validate()
    n = trace.prompt_tokens
    n_dec = len(trace.decode_steps)
    report = MetricsReport(
        config=config.to_dict(),
        trace_info={
            "num_heads": trace.num_heads,
            "head_dim": trace.head_dim,
            "prompt_tokens": n,
            "decode_steps": n_dec,
        },
        meta=dict(meta or {}),
    )
    per_policy = [PolicyMetrics(p.name, p.kind, dict(p.overrides)) for p in policies]
    for h in range(trace.num_heads):
        q_all, k_all, v_all = trace.head_all_tokens(h)
        qp, kp, vp = trace.head_prompt(h)
        rows = list(range(n, n + n_dec))
        ref_out, ref_w = dense_attention_rows(q_all, k_all, v_all, rows, config.rope_base)
        ref_argmax = [int(np.argmax(w)) for w in ref_w]
        _, _, cache0, scores0 = prefill_pass(qp, kp, vp, config, with_outputs=False)
        if analyze:
            report.analysis.append(
                {
                    "head": h,
                    "sparsity_rate": sparsity_rate(importance(scores0, "glo_loc"), config.zeta),
                    "redundancy_rate": head_redundancy_rate(kp, vp, config.tau),
                }
            )
        decode = trace.head_decode(h)
        for pm, policy in zip(per_policy, policies):
            cfg = policy.resolve(config)
            c0, s0 = cache0, scores0
            if any(getattr(cfg, f) != getattr(config, f) for f in _ENGINE_FIELDS):
                _, _, c0, s0 = prefill_pass(qp, kp, vp, cfg, with_outputs=False)
            pm.heads.append(_run_policy_head(policy, config, c0, s0, decode, ref_out, ref_argmax, h))
    report.policies = per_policy
    return report


def report_to_json(report: MetricsReport) -> str:
    return json.dumps(report.to_dict(), indent=2) + "\n"


def _csv_value(x: Any) -> str:
    if x is None:
        return ""
    if isinstance(x, bool):
        return "true" if x else "false"
    return repr(x) if isinstance(x, float) else str(x)


def report_rows(doc: dict) -> list[dict]:
    """Flatten a report dict into one summary row per (policy, head) plus an ``all`` row."""
    analysis = {a["head"]: a for a in doc["analysis"]}
    rows = []
    for p in doc["policies"]:
        for h in p["heads"]:
            a = analysis.get(h["head"], {})
            rows.append({"policy": p["policy"], "head": h["head"], **h["summary"],
                         "sparsity_rate": a.get("sparsity_rate"), "redundancy_rate": a.get("redundancy_rate")})
        rows.append({"policy": p["policy"], "head": "all", **p["aggregate"],
                     "sparsity_rate": None, "redundancy_rate": None})
    return rows


def report_to_csv(report: MetricsReport) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for row in report_rows(report.to_dict()):
        writer.writerow([_csv_value(row[c]) for c in CSV_COLUMNS])
    return buf.getvalue()


def emit_report(report: MetricsReport, path: str | os.PathLike, fmt: str = "json") -> None:
    if fmt == "json":
        text = report_to_json(report)
    elif fmt == "csv":
        text = report_to_csv(report)
    else:
        raise ValueError(f"unknown report format {fmt!r}")
    with open(path, "w", newline="") as fh:
        fh.write(text)


def analysis_table(trace: Trace, config: CompressionConfig) -> list[dict]:
    """Per-head sparsity and redundancy rates of a trace's prompt."""
    rows = []
    for h in range(trace.num_heads):
        qp, kp, vp = trace.head_prompt(h)
        _, _, _, scores = prefill_pass(qp, kp, vp, config, with_outputs=False)
        rows.append(
            {
                "head": h,
                "tokens": trace.prompt_tokens,
                "sparsity_rate": sparsity_rate(importance(scores, "glo_loc"), config.zeta),
                "redundancy_rate": head_redundancy_rate(kp, vp, config.tau),
            }
        )
    return rows
