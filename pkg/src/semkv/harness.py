"""Pipeline orchestration: classify heads, plan budgets, score fidelity, export.

Fidelity is measured the way a decoder with an evicted cache behaves: for the
last `decode_queries` query rows, attention outputs over the retained K/V
entries (softmax renormalized over the retained, causally visible set) are
compared against outputs over the full cache. This is a proxy for task-level
quality; it needs no language model.
"""

from __future__ import annotations

import csv
import io
import json
import os
from dataclasses import dataclass

import numpy as np

from .allocator import (
    BudgetPlan,
    CompressedCache,
    MemoryFootprint,
    PolicyKind,
    apply_policy,
    build_compressed_cache,
    memory_footprint,
)
from .contribution import BoundSuiteReport, verify_bound_suite
from .errors import ParameterError, SemkvError
from .linalg import CausalMask, attention_weights, masked_softmax, pca_2d
from .separator import (
    HeadProfile,
    HeterogeneitySchedule,
    WindowScores,
    build_layer_profiles,
    heterogeneous_schedule,
    window_column_scores,
)
from .trace import AttentionTrace, SyntheticProfile, gen_synthetic_trace, read_trace

DEFAULT_POLICIES = (PolicyKind.TASK_KV, PolicyKind.STREAMING)
DEFAULT_BUDGETS = (0.4,)


@dataclass
class RunConfig:
    """Everything a run needs; defaults follow the reference setup
    (window 32, kernel 7, 16 sinks, 256 recents, top-t 256)."""

    trace_path: str | None = None
    profile: SyntheticProfile | None = None
    shape: tuple[int, int, int, int] | None = None
    policies: tuple[PolicyKind, ...] = DEFAULT_POLICIES
    budget_ratios: tuple[float, ...] = DEFAULT_BUDGETS
    beta: float = 0.25
    top_m: int = 4
    top_t: int = 256
    window_len: int = 32
    kernel: int = 7
    sinks: int = 16
    recents: int = 256
    decode_queries: int | None = None  # None -> window_len
    seed: int = 0
    contrib_trials: int = 0  # 0 skips the bound suite in `all` runs

    def resolved_decode_queries(self) -> int:
        return self.window_len if self.decode_queries is None else self.decode_queries

    def to_json_dict(self) -> dict:
        return {
            "trace_path": self.trace_path,
            "profile": None
            if self.profile is None
            else {
                "kind": self.profile.kind,
                "seed": self.profile.seed,
                "planted": self.profile.planted,
                "spread": self.profile.spread,
                "needle_position": self.profile.needle_position,
                "needle_strength": self.profile.needle_strength,
                "tail_len": self.profile.tail_len,
            },
            "shape": None if self.shape is None else list(self.shape),
            "policies": [p.value for p in self.policies],
            "budget_ratios": list(self.budget_ratios),
            "beta": self.beta,
            "top_m": self.top_m,
            "top_t": self.top_t,
            "window_len": self.window_len,
            "kernel": self.kernel,
            "sinks": self.sinks,
            "recents": self.recents,
            "decode_queries": self.decode_queries,
            "seed": self.seed,
            "contrib_trials": self.contrib_trials,
        }


def load_trace_for(config: RunConfig) -> AttentionTrace:
    if config.trace_path is not None:
        return read_trace(config.trace_path)
    if config.profile is not None and config.shape is not None:
        return gen_synthetic_trace(config.profile, config.shape)
    raise ParameterError("config needs either trace_path or profile+shape")


@dataclass
class RunResult:
    schedule: HeterogeneitySchedule
    profiles: list[list[HeadProfile]]
    window_scores: list[list[WindowScores]]
    plans: dict[tuple[str, float], list[BudgetPlan]]
    caches: dict[tuple[str, float], CompressedCache]


def compress_run(config: RunConfig, trace: AttentionTrace) -> RunResult:
    """Window scores -> semantic vectors -> classification -> plans -> caches."""
    n = trace.num_heads
    schedule = heterogeneous_schedule(n, config.beta, config.top_m, trace.num_layers)
    profiles: list[list[HeadProfile]] = []
    all_scores = []
    window_len = min(config.window_len, trace.seq_len)
    for r in range(trace.num_layers):
        heads = trace.layer_heads(r)
        try:
            scores = [window_column_scores(h, window_len) for h in heads]
            profiles.append(
                build_layer_profiles(
                    r, heads, window_len, config.top_t,
                    schedule.count_for_layer(r), scores=scores,
                )
            )
        except SemkvError as exc:
            raise type(exc)(f"layer {r}: {exc}") from exc
        all_scores.append(scores)

    plans: dict[tuple[str, float], list[BudgetPlan]] = {}
    caches: dict[tuple[str, float], CompressedCache] = {}
    for policy in config.policies:
        for ratio in config.budget_ratios:
            layer_plans = []
            for r in range(trace.num_layers):
                classes = [p.head_class for p in profiles[r]]
                layer_plans.append(
                    apply_policy(
                        r,
                        trace.layer_heads(r),
                        classes,
                        policy,
                        ratio,
                        config.sinks,
                        config.recents,
                        window_len,
                        config.kernel,
                        scores=all_scores[r],
                    )
                )
            key = (PolicyKind(policy).value, ratio)
            plans[key] = layer_plans
            caches[key] = build_compressed_cache(trace, layer_plans)
    return RunResult(schedule, profiles, all_scores, plans, caches)


@dataclass
class FidelityReport:
    decode_queries: int
    per_head_l2: np.ndarray  # (R, n) mean L2 error over decode rows
    per_head_cosine: np.ndarray  # (R, n)

    @property
    def mean_l2(self) -> float:
        return float(self.per_head_l2.mean())

    @property
    def mean_cosine(self) -> float:
        return float(self.per_head_cosine.mean())


def _rows_cosine(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    na = np.linalg.norm(a, axis=1)
    nb = np.linalg.norm(b, axis=1)
    out = np.ones(a.shape[0])
    both = (na > 0) & (nb > 0)
    out[both] = np.sum(a[both] * b[both], axis=1) / (na[both] * nb[both])
    out[(na > 0) ^ (nb > 0)] = 0.0
    return out


def fidelity_eval(
    trace: AttentionTrace,
    cache: CompressedCache,
    plans: list[BudgetPlan],
    decode_queries: int,
) -> FidelityReport:
    """Decode-attention reconstruction error of a compressed cache vs the full one."""
    n_seq = trace.seq_len
    if not 1 <= decode_queries <= n_seq:
        raise ParameterError(f"decode_queries {decode_queries} outside [1, {n_seq}]")
    first_row = n_seq - decode_queries
    l2 = np.empty((trace.num_layers, trace.num_heads))
    cos = np.empty((trace.num_layers, trace.num_heads))
    for r in range(trace.num_layers):
        for h in range(trace.num_heads):
            inputs = trace.head_inputs(r, h)
            full_w = attention_weights(
                inputs,
                CausalMask.window(decode_queries, n_seq),
                query_rows=range(first_row, n_seq),
            )
            full_out = full_w @ inputs.values
            entry = cache.entry(r, h)
            q = inputs.queries[first_row:]
            scores = (q @ entry.keys.T) / np.sqrt(float(trace.head_dim))
            visible = (
                entry.positions[None, :]
                <= (first_row + np.arange(decode_queries))[:, None]
            )
            retained_w = masked_softmax(scores, visible)
            retained_out = retained_w @ entry.values
            diff = full_out - retained_out
            l2[r, h] = float(np.linalg.norm(diff, axis=1).mean())
            cos[r, h] = float(_rows_cosine(full_out, retained_out).mean())
    return FidelityReport(decode_queries, l2, cos)


@dataclass
class EvalReport:
    """Run results in one serializable bundle."""

    config: dict
    trace_info: dict
    schedule: dict
    classifications: list[list[str]]
    distances: list[list[float]]
    pca: list[dict]
    policies: list[dict]
    contribution: dict | None = None

    def to_json_dict(self) -> dict:
        out = {
            "config": self.config,
            "trace": self.trace_info,
            "schedule": self.schedule,
            "classifications": self.classifications,
            "distances": self.distances,
            "pca": self.pca,
            "policies": self.policies,
        }
        if self.contribution is not None:
            out["contribution"] = self.contribution
        return out

    def csv_rows(self) -> list[list]:
        rows = []
        for entry in self.policies:
            per_head = entry["fidelity"]["per_head"]
            for r, layer_rows in enumerate(per_head):
                for h, cell in enumerate(layer_rows):
                    rows.append(
                        [
                            entry["policy"],
                            entry["budget_ratio"],
                            r,
                            h,
                            self.classifications[r][h],
                            cell["retained_tokens"],
                            cell["l2_error"],
                            cell["cosine_similarity"],
                        ]
                    )
        return rows


CSV_HEADER = [
    "policy",
    "budget_ratio",
    "layer",
    "head",
    "head_class",
    "retained_tokens",
    "l2_error",
    "cosine_similarity",
]
PCA_HEADER = ["layer", "head", "x", "y", "class"]


def build_eval_report(
    config: RunConfig,
    trace: AttentionTrace,
    result: RunResult,
    fidelity: dict[tuple[str, float], FidelityReport],
    memory: dict[tuple[str, float], MemoryFootprint],
    contribution: BoundSuiteReport | None = None,
) -> EvalReport:
    classifications = [
        [p.head_class.value for p in layer] for layer in result.profiles
    ]
    distances = [
        [p.distance_to_center for p in layer] for layer in result.profiles
    ]
    pca_blocks = []
    for r, layer in enumerate(result.profiles):
        coords = pca_2d(np.asarray([p.semantic.values for p in layer]))
        pca_blocks.append(
            {
                "layer": r,
                "points": [
                    {
                        "head": h,
                        "x": float(coords[h, 0]),
                        "y": float(coords[h, 1]),
                        "class": layer[h].head_class.value,
                    }
                    for h in range(len(layer))
                ],
            }
        )
    policy_entries = []
    for (policy, ratio), fid in sorted(fidelity.items()):
        mem = memory[(policy, ratio)]
        plans = result.plans[(policy, ratio)]
        per_head = [
            [
                {
                    "retained_tokens": int(
                        len(plans[r].per_head_retained[h])
                        + (
                            len(plans[r].per_head_groups[h])
                            if plans[r].per_head_groups is not None
                            else 0
                        )
                    ),
                    "l2_error": float(fid.per_head_l2[r, h]),
                    "cosine_similarity": float(fid.per_head_cosine[r, h]),
                }
                for h in range(trace.num_heads)
            ]
            for r in range(trace.num_layers)
        ]
        policy_entries.append(
            {
                "policy": policy,
                "budget_ratio": ratio,
                "memory": {
                    "tokens_retained": mem.tokens_retained,
                    "bytes": mem.bytes,
                    "ratio_vs_full": mem.ratio_vs_full,
                },
                "fidelity": {
                    "decode_queries": fid.decode_queries,
                    "mean_l2": fid.mean_l2,
                    "mean_cosine": fid.mean_cosine,
                    "per_head": per_head,
                },
            }
        )
    return EvalReport(
        config=config.to_json_dict(),
        trace_info={
            "num_layers": trace.num_layers,
            "num_heads": trace.num_heads,
            "seq_len": trace.seq_len,
            "head_dim": trace.head_dim,
            "source": config.trace_path or "synthetic",
        },
        schedule={
            "beta": result.schedule.beta,
            "top_m": result.schedule.top_m,
            "per_layer_counts": list(result.schedule.per_layer_counts),
        },
        classifications=classifications,
        distances=distances,
        pca=pca_blocks,
        policies=policy_entries,
        contribution=None if contribution is None else contribution.to_json_dict(),
    )


def _write_bytes(destination, payload: bytes) -> int:
    if isinstance(destination, (str, os.PathLike)):
        with open(destination, "wb") as f:
            return f.write(payload)
    return destination.write(payload)


def export_report(report: EvalReport, fmt: str, destination) -> int:
    """Serialize a report as canonical JSON or flat CSV; returns bytes written."""
    if fmt == "json":
        payload = (json.dumps(report.to_json_dict(), indent=2) + "\n").encode()
    elif fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for row in report.csv_rows():
            writer.writerow([_csv_cell(c) for c in row])
        payload = buf.getvalue().encode()
    else:
        raise ParameterError(f"unknown report format {fmt!r}")
    return _write_bytes(destination, payload)


def export_pca_csv(report: EvalReport, destination) -> int:
    """Per-head 2-D semantic coordinates, one row per (layer, head)."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(PCA_HEADER)
    for block in report.pca:
        for point in block["points"]:
            writer.writerow(
                [
                    block["layer"],
                    point["head"],
                    _csv_cell(point["x"]),
                    _csv_cell(point["y"]),
                    point["class"],
                ]
            )
    return _write_bytes(destination, buf.getvalue().encode())


def _csv_cell(value):
    if isinstance(value, float):
        return repr(value)
    return value


def run_all(config: RunConfig, trace: AttentionTrace, return_result: bool = False):
    """The full pipeline over one trace, including the optional bound suite."""
    result = compress_run(config, trace)
    dq = min(config.resolved_decode_queries(), trace.seq_len)
    fidelity = {
        key: fidelity_eval(trace, cache, result.plans[key], dq)
        for key, cache in result.caches.items()
    }
    memory = {key: memory_footprint(cache) for key, cache in result.caches.items()}
    contrib = None
    if config.contrib_trials > 0:
        contrib = verify_bound_suite(config.seed, config.contrib_trials)
    report = build_eval_report(config, trace, result, fidelity, memory, contrib)
    if return_result:
        return report, result
    return report
