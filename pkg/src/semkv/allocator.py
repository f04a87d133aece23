"""Per-head retained-token selection under the head-aware policy and baselines.

Policies:

  full              every head keeps every position.
  task-kv           heterogeneous heads keep everything; the rest keep sinks,
                    recents, and the k highest pooled-score middle positions.
  no-cache          like task-kv but the k middle slots extend the recents.
  compressed-cache  like task-kv but the k middle slots hold synthetic
                    group-mean K/V entries built from contiguous middle groups.
  streaming         every head keeps the first s1 and last (B/n - s1) positions.
  uniform-topk      every head keeps its observation window plus its own
                    top-(B/n - L) pooled positions outside the window.

The layer budget is B = floor(budget_ratio * N * n) tokens.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import NamedTuple

import numpy as np

from .errors import (
    AllHeadsHeterogeneousError,
    CacheConsistencyError,
    InfeasibleBudgetError,
    ParameterError,
)
from .separator import HeadClass, WindowScores, top_t_indices, window_column_scores
from .trace import AttentionTrace


class PolicyKind(str, Enum):
    FULL = "full"
    TASK_KV = "task-kv"
    STREAMING = "streaming"
    UNIFORM_TOPK = "uniform-topk"
    NO_CACHE = "no-cache"
    COMPRESSED_CACHE = "compressed-cache"


class MiddleCount(NamedTuple):
    k: int
    clamped: bool


def middle_activation_count(
    budget: int, seq_len: int, f_r: int, n: int, sinks: int, recents: int
) -> MiddleCount:
    """Middle activations per non-heterogeneous head.

    k = floor((B - N * f_r) / (n - f_r)) - s1 - s2, clamped at 0; the clamp
    flag lets callers warn that the budget degraded to sinks+recents only.
    """
    if min(budget, seq_len, sinks, recents) < 0 or f_r < 0:
        raise ParameterError("budget arithmetic needs non-negative inputs")
    if f_r >= n:
        raise AllHeadsHeterogeneousError(
            f"f_r={f_r} with n={n}: no non-heterogeneous heads to allocate for"
        )
    if budget < seq_len * f_r:
        raise InfeasibleBudgetError(
            f"budget {budget} < {seq_len * f_r} needed by {f_r} full-cache heads"
        )
    raw = (budget - seq_len * f_r) // (n - f_r) - sinks - recents
    return MiddleCount(k=max(raw, 0), clamped=raw < 0)


def pool_scores(scores: np.ndarray, kernel: int) -> np.ndarray:
    """Centered moving average with edge truncation (divisor = window overlap)."""
    if kernel < 1 or kernel % 2 == 0:
        raise ParameterError(f"kernel must be odd and >= 1, got {kernel}")
    scores = np.asarray(scores, dtype=np.float64)
    if kernel == 1:
        return scores.copy()
    half = kernel // 2
    n = scores.shape[0]
    cumsum = np.concatenate([[0.0], np.cumsum(scores)])
    lo = np.maximum(np.arange(n) - half, 0)
    hi = np.minimum(np.arange(n) + half + 1, n)
    return (cumsum[hi] - cumsum[lo]) / (hi - lo)


def select_retained_indices(
    head_class: HeadClass,
    pooled: np.ndarray,
    seq_len: int,
    sinks: int,
    recents: int,
    k: int,
) -> np.ndarray:
    """Sorted original positions a head keeps.

    Heterogeneous heads keep everything. Others keep the first `sinks`, the
    last `recents`, and the k top pooled scores from the middle region
    [sinks, N - recents); if sinks + recents >= N the whole sequence stays.
    """
    if head_class == HeadClass.HETEROGENEOUS or sinks + recents >= seq_len:
        return np.arange(seq_len)
    middle_lo, middle_hi = sinks, seq_len - recents
    keep = [np.arange(middle_lo), np.arange(middle_hi, seq_len)]
    if k > 0:
        middle = np.asarray(pooled, dtype=np.float64)[middle_lo:middle_hi]
        picks = top_t_indices(middle, min(k, middle_hi - middle_lo)) + middle_lo
        keep.insert(1, picks)
    return np.sort(np.concatenate(keep))


def _middle_groups(seq_len: int, sinks: int, recents: int, k: int) -> list[tuple[int, int]]:
    """Split the middle region into up to k contiguous, non-empty [start, stop) groups."""
    lo, hi = sinks, seq_len - recents
    if k <= 0 or hi <= lo:
        return []
    bounds = np.linspace(lo, hi, min(k, hi - lo) + 1).astype(int)
    return [(int(a), int(b)) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]


@dataclass
class BudgetPlan:
    """Retained-token decision for one layer under one policy."""

    layer: int
    policy: PolicyKind
    total_budget: int
    sinks: int
    recents: int
    middle_k: int
    clamped: bool
    head_classes: list[HeadClass]
    per_head_retained: list[np.ndarray]
    per_head_groups: list[list[tuple[int, int]]] | None = None

    def retained_tokens(self) -> int:
        total = sum(len(r) for r in self.per_head_retained)
        if self.per_head_groups is not None:
            total += sum(len(g) for g in self.per_head_groups)
        return total

    def to_json_dict(self) -> dict:
        out = {
            "layer": self.layer,
            "policy": self.policy.value,
            "total_budget": self.total_budget,
            "sinks": self.sinks,
            "recents": self.recents,
            "middle_k": self.middle_k,
            "clamped": self.clamped,
            "head_classes": [c.value for c in self.head_classes],
            "per_head_retained": [r.tolist() for r in self.per_head_retained],
        }
        if self.per_head_groups is not None:
            out["per_head_groups"] = [
                [[a, b] for a, b in groups] for groups in self.per_head_groups
            ]
        return out

    @classmethod
    def from_json_dict(cls, d: dict) -> "BudgetPlan":
        groups = d.get("per_head_groups")
        return cls(
            layer=d["layer"],
            policy=PolicyKind(d["policy"]),
            total_budget=d["total_budget"],
            sinks=d["sinks"],
            recents=d["recents"],
            middle_k=d["middle_k"],
            clamped=d["clamped"],
            head_classes=[HeadClass(c) for c in d["head_classes"]],
            per_head_retained=[np.asarray(r, dtype=int) for r in d["per_head_retained"]],
            per_head_groups=None
            if groups is None
            else [[(int(a), int(b)) for a, b in g] for g in groups],
        )


def _pooled_scores(heads, window_len: int, kernel: int, scores) -> list[np.ndarray]:
    if scores is None:
        scores = [window_column_scores(h, window_len) for h in heads]
    return [pool_scores(s.column_means, kernel) for s in scores]


def apply_policy(
    layer: int,
    heads,
    head_classes: list[HeadClass],
    policy: PolicyKind,
    budget_ratio: float,
    sinks: int,
    recents: int,
    window_len: int,
    kernel: int,
    scores: list[WindowScores] | None = None,
) -> BudgetPlan:
    """Build the retained-index plan for one layer.

    `heads` is the layer's per-head AttentionInputs; `scores` may carry
    precomputed window scores to avoid recomputation.
    """
    try:
        policy = PolicyKind(policy)
    except ValueError as exc:
        raise ParameterError(str(exc)) from exc
    n = len(heads)
    seq_len = heads[0].seq_len
    if not 0 < budget_ratio <= 1:
        raise ParameterError(f"budget_ratio {budget_ratio} outside (0, 1]")
    budget = int(np.floor(budget_ratio * seq_len * n))
    everything = [np.arange(seq_len) for _ in range(n)]

    if policy == PolicyKind.FULL:
        return BudgetPlan(
            layer, policy, budget, sinks, recents, 0, False, list(head_classes), everything
        )

    if policy in (PolicyKind.STREAMING, PolicyKind.UNIFORM_TOPK):
        per_head = budget // n
        retained = []
        if policy == PolicyKind.STREAMING:
            for _ in range(n):
                if per_head >= seq_len:
                    retained.append(np.arange(seq_len))
                    continue
                s = min(sinks, per_head)
                retained.append(
                    np.concatenate(
                        [np.arange(s), np.arange(seq_len - (per_head - s), seq_len)]
                    )
                )
        else:
            pooled = _pooled_scores(heads, window_len, kernel, scores)
            for h in range(n):
                if per_head >= seq_len:
                    retained.append(np.arange(seq_len))
                    continue
                w = min(window_len, per_head)
                window = np.arange(seq_len - w, seq_len)
                extra = per_head - w
                if extra > 0:
                    before = pooled[h][: seq_len - window_len]
                    picks = top_t_indices(before, min(extra, before.shape[0]))
                    retained.append(np.sort(np.concatenate([picks, window])))
                else:
                    retained.append(window)
        return BudgetPlan(
            layer, policy, budget, sinks, recents, 0, False, list(head_classes), retained
        )

    # head-aware family: task-kv and its information-compensation variants
    f_r = sum(1 for c in head_classes if c == HeadClass.HETEROGENEOUS)
    if budget < seq_len * f_r:
        raise InfeasibleBudgetError(
            f"layer {layer}: budget {budget} < {seq_len * f_r} needed by "
            f"{f_r} heterogeneous heads"
        )
    if f_r == n:
        return BudgetPlan(
            layer, policy, budget, sinks, recents, 0, False, list(head_classes), everything
        )
    k, clamped = middle_activation_count(budget, seq_len, f_r, n, sinks, recents)

    retained: list[np.ndarray] = []
    groups: list[list[tuple[int, int]]] | None = None
    if policy == PolicyKind.TASK_KV:
        pooled = _pooled_scores(heads, window_len, kernel, scores)
        for h in range(n):
            retained.append(
                select_retained_indices(
                    head_classes[h], pooled[h], seq_len, sinks, recents, k
                )
            )
    elif policy == PolicyKind.NO_CACHE:
        for h in range(n):
            # middle slots are spent on extra recents instead
            retained.append(
                select_retained_indices(
                    head_classes[h], np.zeros(seq_len), seq_len, sinks, recents + k, 0
                )
            )
    elif policy == PolicyKind.COMPRESSED_CACHE:
        groups = []
        for h in range(n):
            if head_classes[h] == HeadClass.HETEROGENEOUS:
                retained.append(np.arange(seq_len))
                groups.append([])
            else:
                retained.append(
                    select_retained_indices(
                        head_classes[h], np.zeros(seq_len), seq_len, sinks, recents, 0
                    )
                )
                if sinks + recents >= seq_len:
                    groups.append([])
                else:
                    groups.append(_middle_groups(seq_len, sinks, recents, k))
    else:
        raise ParameterError(f"unknown policy {policy}")

    return BudgetPlan(
        layer,
        policy,
        budget,
        sinks,
        recents,
        k,
        clamped,
        list(head_classes),
        retained,
        groups,
    )


@dataclass
class CacheEntry:
    """Retained K/V rows for one head, ordered by original position.

    `positions[i]` is the original index of row i; synthetic group-mean rows
    carry their group's start position and are flagged in `synthetic`.
    """

    keys: np.ndarray
    values: np.ndarray
    positions: np.ndarray
    synthetic: np.ndarray

    def __post_init__(self):
        if not (
            len(self.keys) == len(self.values) == len(self.positions) == len(self.synthetic)
        ):
            raise CacheConsistencyError("cache entry arrays disagree on row count")
        if np.any(np.diff(self.positions) <= 0):
            raise CacheConsistencyError("cache positions must be strictly increasing")


@dataclass
class CompressedCache:
    """Retained K/V entries per layer and head; the object whose memory is counted."""

    num_layers: int
    num_heads: int
    seq_len: int
    head_dim: int
    entries: list[list[CacheEntry]] = field(default_factory=list)

    def entry(self, layer: int, head: int) -> CacheEntry:
        return self.entries[layer][head]


def build_compressed_cache(trace: AttentionTrace, plans) -> CompressedCache:
    """Copy retained K/V rows (plus synthetic group means) out of the trace."""
    plans = list(plans)
    if len(plans) != trace.num_layers:
        raise CacheConsistencyError(
            f"{len(plans)} plans for {trace.num_layers} layers"
        )
    cache = CompressedCache(
        trace.num_layers, trace.num_heads, trace.seq_len, trace.head_dim
    )
    for r, plan in enumerate(plans):
        layer_entries = []
        for h in range(trace.num_heads):
            idx = np.asarray(plan.per_head_retained[h], dtype=int)
            if idx.size and (idx.min() < 0 or idx.max() >= trace.seq_len):
                raise CacheConsistencyError(
                    f"layer {r} head {h}: retained index outside [0, {trace.seq_len})"
                )
            k_rows = trace.data[r, h, 1][idx]
            v_rows = trace.data[r, h, 2][idx]
            positions = idx.astype(int)
            synthetic = np.zeros(idx.size, dtype=bool)
            if plan.per_head_groups is not None and plan.per_head_groups[h]:
                syn_k, syn_v, syn_pos = [], [], []
                for a, b in plan.per_head_groups[h]:
                    if not 0 <= a < b <= trace.seq_len:
                        raise CacheConsistencyError(
                            f"layer {r} head {h}: group [{a}, {b}) out of range"
                        )
                    syn_k.append(trace.data[r, h, 1][a:b].mean(axis=0))
                    syn_v.append(trace.data[r, h, 2][a:b].mean(axis=0))
                    syn_pos.append(a)
                k_rows = np.concatenate([k_rows, np.asarray(syn_k)])
                v_rows = np.concatenate([v_rows, np.asarray(syn_v)])
                positions = np.concatenate([positions, np.asarray(syn_pos, dtype=int)])
                synthetic = np.concatenate(
                    [synthetic, np.ones(len(syn_pos), dtype=bool)]
                )
                order = np.argsort(positions, kind="stable")
                k_rows, v_rows = k_rows[order], v_rows[order]
                positions, synthetic = positions[order], synthetic[order]
            layer_entries.append(CacheEntry(k_rows, v_rows, positions, synthetic))
        cache.entries.append(layer_entries)
    return cache


class MemoryFootprint(NamedTuple):
    tokens_retained: int
    bytes: int
    ratio_vs_full: float


def memory_footprint(cache: CompressedCache) -> MemoryFootprint:
    """Token, byte (K+V float32), and fraction-of-full accounting for a cache."""
    tokens = sum(
        len(entry.positions) for layer in cache.entries for entry in layer
    )
    nbytes = tokens * 2 * cache.head_dim * 4
    full = cache.num_layers * cache.num_heads * cache.seq_len
    return MemoryFootprint(tokens, nbytes, tokens / full)
