"""Command-line interface: ``run``, ``synth`` and ``analyze``.

Exit codes: 0 on success, 2 on configuration errors, 3 on trace format errors.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
from pathlib import Path

from .config import CompressionConfig
from .errors import ConfigError, InvalidArgumentError, TraceFormatError
from .harness import analysis_table, emit_report, run_experiment
from .policies import make_policy
from .synth import KINDS, gen_synthetic
from .trace import load_trace, save_trace

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_FORMAT = 3

POLICY_CHOICES = ("full", "streaming", "h2o", "snapkv", "ems")




def _rope_base(text: str):
    return None if text.lower() in ("none", "off") else float(text)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="emskv", description="KV-cache compression experiments on attention traces.")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run policies against the full-cache reference")
    run.add_argument("--trace", required=True, type=Path)
    run.add_argument("--policy", action="append", choices=POLICY_CHOICES,
                     help="policy to run; repeat for several (default: ems)")
    run.add_argument("--budget", type=int, required=True, help="stored entries per head")
    run.add_argument("--window", type=int, default=32, help="local window length")
    run.add_argument("--tau", type=float, default=0.6)
    run.add_argument("--gamma", type=float, default=4.0)
    run.add_argument("--zeta", type=float, default=0.95)
    run.add_argument("--kernel-size", type=int, default=7)
    run.add_argument("--pos", dest="with_pos", action="store_true", default=True,
                     help="rotate merged entries at their own positions (default)")
    run.add_argument("--no-pos", dest="with_pos", action="store_false",
                     help="rotate merged entries at their center's position")
    run.add_argument("--rope-base", type=_rope_base, default=10000.0, help="rotary base, or 'none'")
    run.add_argument("--seed", type=int, default=None, help="recorded in the report only")
    run.add_argument("--out", required=True, type=Path)
    run.add_argument("--format", choices=("json", "csv"), default="json")

    syn = sub.add_parser("synth", help="generate a synthetic trace")
    syn.add_argument("--kind", required=True, choices=KINDS)
    syn.add_argument("--seed", type=int, required=True)
    syn.add_argument("--tokens", type=int, required=True)
    syn.add_argument("--heads", type=int, default=1)
    syn.add_argument("--dim", type=int, default=64)
    syn.add_argument("--depth", type=float, default=0.5)
    syn.add_argument("--level", type=float, default=0.8)
    syn.add_argument("--decode-steps", type=int, default=16)
    syn.add_argument("--out", required=True, type=Path)

    ana = sub.add_parser("analyze", help="per-head sparsity and redundancy tables")
    ana.add_argument("--trace", required=True, type=Path)
    ana.add_argument("--window", type=int, default=32)
    ana.add_argument("--tau", type=float, default=0.6)
    ana.add_argument("--zeta", type=float, default=0.95)
    ana.add_argument("--rope-base", type=_rope_base, default=10000.0)
    ana.add_argument("--format", choices=("json", "csv"), default=None,
                     help="default: inferred from the output suffix")
    ana.add_argument("--out", required=True, type=Path)
    return parser


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _cmd_run(args) -> int:
    digest = _sha256(args.trace)
    trace = load_trace(args.trace)
    config = CompressionConfig(
        n_budget=args.budget,
        l_win=args.window,
        tau=args.tau,
        gamma=args.gamma,
        zeta=args.zeta,
        kernel_size=args.kernel_size,
        position_mode="with_pos" if args.with_pos else "without_pos",
        rope_base=args.rope_base,
    )
    policies = [make_policy(p) for p in (args.policy or ["ems"])]
    meta = {"trace_sha256": digest, "trace_path": args.trace.name, "seed": args.seed}
    report = run_experiment(trace, policies, config, meta=meta)
    emit_report(report, args.out, args.format)
    print(f"trace sha256 {digest}")
    print(f"wrote {args.format} report to {args.out}")
    return EXIT_OK


def _cmd_synth(args) -> int:
    trace = gen_synthetic(
        args.kind, args.seed, args.tokens, args.heads, args.dim,
        decode_steps=args.decode_steps, depth=args.depth, level=args.level,
    )
    save_trace(trace, args.out)
    print(f"trace sha256 {_sha256(args.out)}")
    return EXIT_OK


def _cmd_analyze(args) -> int:
    digest = _sha256(args.trace)
    trace = load_trace(args.trace)
    # the budget only has to be valid; analysis does not compress
    config = CompressionConfig(
        n_budget=args.window + 1, l_win=args.window, tau=args.tau, zeta=args.zeta, rope_base=args.rope_base
    )
    rows = analysis_table(trace, config)
    fmt = args.format or ("csv" if args.out.suffix == ".csv" else "json")
    with open(args.out, "w", newline="") as fh:
        if fmt == "csv":
            writer = csv.DictWriter(fh, fieldnames=["head", "tokens", "sparsity_rate", "redundancy_rate"],
                                    lineterminator="\n")
            writer.writeheader()
            writer.writerows(rows)
        else:
            doc = {"trace_sha256": digest, "zeta": args.zeta, "tau": args.tau, "heads": rows}
            fh.write(json.dumps(doc, indent=2) + "\n")
    print(f"trace sha256 {digest}")
    for r in rows:
        print(f"head {r['head']}: sparsity {r['sparsity_rate']:.4f} redundancy {r['redundancy_rate']:.4f}")
    return EXIT_OK


_COMMANDS = {"run": _cmd_run, "synth": _cmd_synth, "analyze": _cmd_analyze}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except TraceFormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except (ConfigError, InvalidArgumentError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
