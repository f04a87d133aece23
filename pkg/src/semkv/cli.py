"""Command-line entry points.

Subcommands: gen, compress, eval, contrib, pca, all. Shared flags can also
come from a JSON config file (--config); explicit flags win over the file.
Failures print one machine-readable JSON object on stderr and exit nonzero.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

from .allocator import BudgetPlan, PolicyKind, build_compressed_cache, memory_footprint
from .contribution import verify_bound_suite
from .errors import ParameterError, SemkvError
from .harness import (
    RunConfig,
    compress_run,
    export_pca_csv,
    export_report,
    fidelity_eval,
    load_trace_for,
    run_all,
)
from .trace import SyntheticProfile, gen_synthetic_trace, write_trace


def _parse_shape(text: str) -> tuple[int, int, int, int]:
    parts = [int(p) for p in text.split(",")]
    if len(parts) != 4:
        raise ParameterError(f"--shape wants R,n,N,d, got {text!r}")
    return tuple(parts)  # type: ignore[return-value]


def _split_multi(values, cast):
    out = []
    for v in values:
        out.extend(cast(p) for p in str(v).split(",") if p)
    return out


def _parse_policies(names) -> tuple[PolicyKind, ...]:
    try:
        return tuple(PolicyKind(p) for p in names)
    except ValueError as exc:
        raise ParameterError(str(exc)) from exc


def _add_common(parser: argparse.ArgumentParser):
    parser.add_argument("--config", help="JSON config file; flags override it")
    parser.add_argument("--trace", help="input .tkv trace file")
    parser.add_argument("--policy", action="append", help="policy name (repeatable)")
    parser.add_argument("--budget", action="append", help="budget ratio (repeatable)")
    parser.add_argument("--beta", type=float, help="bottom-layer heterogeneous fraction")
    parser.add_argument("--m-top", type=int, dest="m_top", help="top-layer heterogeneous count")
    parser.add_argument("--top-t", type=int, dest="top_t", help="top-t keys for semantic vectors")
    parser.add_argument("--window", type=int, help="observation window length")
    parser.add_argument("--kernel", type=int, help="pooling kernel (odd)")
    parser.add_argument("--sinks", type=int, help="sink tokens retained")
    parser.add_argument("--recents", type=int, help="recent tokens retained")
    parser.add_argument("--decode-queries", type=int, dest="decode_queries")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--out", help="output file or directory")
    parser.add_argument("--format", choices=["json", "csv"], help="report format")


def _add_profile_flags(parser: argparse.ArgumentParser):
    parser.add_argument(
        "--profile",
        choices=["uniform-random", "clustered-heads", "planted-needle"],
        help="synthetic trace recipe",
    )
    parser.add_argument("--shape", help="R,n,N,d for synthetic traces")
    parser.add_argument("--planted", type=int, help="planted heads per layer")
    parser.add_argument("--spread", type=float, help="clustered-heads noise level")
    parser.add_argument("--needle-pos", type=int, dest="needle_pos")
    parser.add_argument("--needle-strength", type=float, dest="needle_strength")
    parser.add_argument("--tail", type=int, help="aligned tail rows for planted-needle")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="semkv",
        description="Head-aware KV-cache compression engine over attention traces.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_gen = sub.add_parser("gen", help="generate a synthetic .tkv trace")
    _add_profile_flags(p_gen)
    p_gen.add_argument("--seed", type=int)
    p_gen.add_argument("--out", required=True, help="destination .tkv path")
    p_gen.add_argument("--config", help="JSON config file; flags override it")

    p_compress = sub.add_parser("compress", help="plan budgets and report memory")
    _add_common(p_compress)
    _add_profile_flags(p_compress)

    p_eval = sub.add_parser("eval", help="fidelity of saved plans against a trace")
    _add_common(p_eval)
    p_eval.add_argument("--plans", action="append", required=True, help="plans JSON (repeatable)")

    p_contrib = sub.add_parser("contrib", help="head-removal contribution bound suite")
    p_contrib.add_argument("--seed", type=int, default=42)
    p_contrib.add_argument("--trials", type=int, default=1000)
    p_contrib.add_argument("--heads", type=int, default=8)
    p_contrib.add_argument("--dim", type=int, default=16)
    p_contrib.add_argument("--out-dim", type=int, dest="out_dim", default=32)
    p_contrib.add_argument("--out", help="output file or directory")

    p_pca = sub.add_parser("pca", help="2-D semantic-vector coordinates per head")
    _add_common(p_pca)
    _add_profile_flags(p_pca)

    p_all = sub.add_parser("all", help="full pipeline: plans, memory, fidelity, pca")
    _add_common(p_all)
    _add_profile_flags(p_all)
    p_all.add_argument("--contrib-trials", type=int, dest="contrib_trials")

    return parser


_CONFIG_KEYS = (
    "beta",
    "top_t",
    "window_len",
    "kernel",
    "sinks",
    "recents",
    "decode_queries",
    "seed",
    "contrib_trials",
)


def _profile_from(args, file_cfg: dict) -> SyntheticProfile | None:
    file_profile = file_cfg.get("profile") if isinstance(file_cfg.get("profile"), dict) else {}
    kind = getattr(args, "profile", None) or file_profile.get("kind")
    if kind is None:
        return None
    fields = {
        "seed": getattr(args, "seed", None),
        "planted": getattr(args, "planted", None),
        "spread": getattr(args, "spread", None),
        "needle_position": getattr(args, "needle_pos", None),
        "needle_strength": getattr(args, "needle_strength", None),
        "tail_len": getattr(args, "tail", None),
    }
    merged = {}
    for name, flag_val in fields.items():
        if flag_val is not None:
            merged[name] = flag_val
        elif file_profile.get(name) is not None:
            merged[name] = file_profile[name]
    return SyntheticProfile(kind=kind, **merged)


def _config_from(args) -> RunConfig:
    file_cfg = {}
    if getattr(args, "config", None):
        with open(args.config) as f:
            file_cfg = json.load(f)
    cfg = RunConfig()
    for key in _CONFIG_KEYS:
        if file_cfg.get(key) is not None:
            setattr(cfg, key, file_cfg[key])
    if file_cfg.get("top_m") is not None:
        cfg.top_m = file_cfg["top_m"]
    if file_cfg.get("policies"):
        cfg.policies = _parse_policies(file_cfg["policies"])
    if file_cfg.get("budget_ratios"):
        cfg.budget_ratios = tuple(float(b) for b in file_cfg["budget_ratios"])
    if file_cfg.get("trace_path"):
        cfg.trace_path = file_cfg["trace_path"]
    if file_cfg.get("shape"):
        cfg.shape = tuple(int(x) for x in file_cfg["shape"])

    flag_map = {
        "beta": "beta",
        "m_top": "top_m",
        "top_t": "top_t",
        "window": "window_len",
        "kernel": "kernel",
        "sinks": "sinks",
        "recents": "recents",
        "decode_queries": "decode_queries",
        "seed": "seed",
        "contrib_trials": "contrib_trials",
    }
    for flag, attr in flag_map.items():
        value = getattr(args, flag, None)
        if value is not None:
            setattr(cfg, attr, value)
    if getattr(args, "trace", None):
        cfg.trace_path = args.trace
    if getattr(args, "policy", None):
        cfg.policies = _parse_policies(_split_multi(args.policy, str))
    if getattr(args, "budget", None):
        cfg.budget_ratios = tuple(_split_multi(args.budget, float))
    if getattr(args, "shape", None):
        cfg.shape = _parse_shape(args.shape)
    profile = _profile_from(args, file_cfg)
    if profile is not None:
        cfg.profile = profile
    return cfg


def _outdir(args) -> str:
    out = getattr(args, "out", None) or "."
    os.makedirs(out, exist_ok=True)
    return out


def _plan_filename(policy: str, ratio: float) -> str:
    return f"plans_{policy}_{ratio:g}.json"


def _write_json(path: str, payload: dict) -> None:
    with open(path, "w") as f:
        json.dump(payload, f, indent=2)
        f.write("\n")


def _cmd_gen(args) -> int:
    cfg = _config_from(args)
    if cfg.profile is None or cfg.shape is None:
        raise ParameterError("gen needs --profile and --shape")
    trace = gen_synthetic_trace(cfg.profile, cfg.shape)
    written = write_trace(trace, args.out)
    print(f"wrote {args.out} ({written} bytes)")
    return 0


def _plans_payload(cfg: RunConfig, trace, policy: str, ratio: float, layer_plans) -> dict:
    return {
        "policy": policy,
        "budget_ratio": ratio,
        "trace": {
            "num_layers": trace.num_layers,
            "num_heads": trace.num_heads,
            "seq_len": trace.seq_len,
            "head_dim": trace.head_dim,
        },
        "layers": [p.to_json_dict() for p in layer_plans],
    }


def _cmd_compress(args) -> int:
    cfg = _config_from(args)
    trace = load_trace_for(cfg)
    result = compress_run(cfg, trace)
    out = _outdir(args)
    memory_rows = []
    for (policy, ratio), layer_plans in sorted(result.plans.items()):
        _write_json(
            os.path.join(out, _plan_filename(policy, ratio)),
            _plans_payload(cfg, trace, policy, ratio, layer_plans),
        )
        mem = memory_footprint(result.caches[(policy, ratio)])
        memory_rows.append(
            {
                "policy": policy,
                "budget_ratio": ratio,
                "tokens_retained": mem.tokens_retained,
                "bytes": mem.bytes,
                "ratio_vs_full": mem.ratio_vs_full,
            }
        )
    _write_json(os.path.join(out, "memory.json"), {"memory": memory_rows})
    print(f"wrote {len(memory_rows)} plan file(s) and memory.json to {out}")
    return 0


def _cmd_eval(args) -> int:
    cfg = _config_from(args)
    trace = load_trace_for(cfg)
    out = _outdir(args)
    fidelity_rows = []
    for plans_path in args.plans:
        with open(plans_path) as f:
            payload = json.load(f)
        layer_plans = [BudgetPlan.from_json_dict(d) for d in payload["layers"]]
        cache = build_compressed_cache(trace, layer_plans)
        dq = min(cfg.resolved_decode_queries(), trace.seq_len)
        fid = fidelity_eval(trace, cache, layer_plans, dq)
        fidelity_rows.append(
            {
                "plans": os.path.basename(plans_path),
                "policy": payload["policy"],
                "budget_ratio": payload["budget_ratio"],
                "decode_queries": fid.decode_queries,
                "mean_l2": fid.mean_l2,
                "mean_cosine": fid.mean_cosine,
                "per_head_l2": fid.per_head_l2.tolist(),
                "per_head_cosine": fid.per_head_cosine.tolist(),
            }
        )
    _write_json(os.path.join(out, "fidelity.json"), {"fidelity": fidelity_rows})
    print(f"wrote fidelity.json to {out}")
    return 0


def _cmd_contrib(args) -> int:
    report = verify_bound_suite(
        args.seed, args.trials, args.heads, args.dim, args.out_dim
    )
    payload = report.to_json_dict()
    if args.out:
        path = args.out
        if os.path.isdir(path) or not path.endswith(".json"):
            os.makedirs(path, exist_ok=True)
            path = os.path.join(path, "contribution.json")
        _write_json(path, payload)
        print(f"wrote {path}")
    else:
        print(json.dumps(payload, indent=2))
    return 0


def _cmd_pca(args) -> int:
    cfg = _config_from(args)
    trace = load_trace_for(cfg)
    pca_cfg = dataclasses.replace(
        cfg, policies=(PolicyKind.FULL,), budget_ratios=(1.0,), decode_queries=1
    )
    report = run_all(pca_cfg, trace)
    out = _outdir(args)
    path = os.path.join(out, "pca.csv")
    export_pca_csv(report, path)
    print(f"wrote {path}")
    return 0


def _cmd_all(args) -> int:
    cfg = _config_from(args)
    trace = load_trace_for(cfg)
    out = _outdir(args)
    if cfg.trace_path is None:
        write_trace(trace, os.path.join(out, "trace.tkv"))
    report, result = run_all(cfg, trace, return_result=True)
    for (policy, ratio), layer_plans in sorted(result.plans.items()):
        _write_json(
            os.path.join(out, _plan_filename(policy, ratio)),
            _plans_payload(cfg, trace, policy, ratio, layer_plans),
        )
    export_report(report, "json", os.path.join(out, "report.json"))
    export_report(report, "csv", os.path.join(out, "report.csv"))
    export_pca_csv(report, os.path.join(out, "pca.csv"))
    fmt = getattr(args, "format", None)
    print(f"wrote report.json, report.csv, pca.csv and plans to {out}"
          + (f" (primary format: {fmt})" if fmt else ""))
    return 0


_COMMANDS = {
    "gen": _cmd_gen,
    "compress": _cmd_compress,
    "eval": _cmd_eval,
    "contrib": _cmd_contrib,
    "pca": _cmd_pca,
    "all": _cmd_all,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (SemkvError, OSError, json.JSONDecodeError) as exc:
        print(
            json.dumps({"error": type(exc).__name__, "message": str(exc)}),
            file=sys.stderr,
        )
        return 1


if __name__ == "__main__":
    sys.exit(main())
