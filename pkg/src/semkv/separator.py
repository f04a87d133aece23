"""Semantic vectors, per-layer head distances, and heterogeneity classification.

A head's semantic vector is the column-mean of its causal attention matrix
weighted into its value states. The production path approximates it from an
observation window of the last L query rows, keeping only the top-t scoring
key positions; the exact full-sequence form is kept for verification.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import EmptyInputError, ParameterError
from .linalg import AttentionInputs, CausalMask, attention_weights


class HeadClass(str, Enum):
    HETEROGENEOUS = "heterogeneous"
    NON_HETEROGENEOUS = "non-heterogeneous"


@dataclass(frozen=True)
class WindowScores:
    """Column-mean attention mass from the last `window_len` query rows.

    `column_means` sums to at most 1 (each averaged row sums to 1; columns
    blocked for every window row contribute 0). `selected` is filled by the
    top-t step, None until then.
    """

    window_len: int
    column_means: np.ndarray
    top_t: int | None = None
    selected: np.ndarray | None = None


@dataclass(frozen=True)
class SemanticVector:
    values: np.ndarray
    source: str  # "exact" | "approximated"


@dataclass(frozen=True)
class HeadProfile:
    layer: int
    head: int
    semantic: SemanticVector
    distance_to_center: float
    head_class: HeadClass


@dataclass(frozen=True)
class HeterogeneitySchedule:
    """Per-layer heterogeneous-head counts, linearly interpolated.

    Layer 0 gets round(n * beta) heads, the top layer gets `top_m`, interior
    layers follow the line between them, rounded half-away-from-zero and
    clamped to [0, n].
    """

    beta: float
    top_m: int
    per_layer_counts: tuple[int, ...]

    def count_for_layer(self, layer: int) -> int:
        return self.per_layer_counts[layer]


def semantic_vector_full(inputs: AttentionInputs) -> SemanticVector:
    """Exact semantic vector: (column-mean of full causal attention) @ V."""
    weights = attention_weights(inputs, CausalMask.full(inputs.seq_len))
    col_means = weights.mean(axis=0)
    return SemanticVector(values=col_means @ inputs.values, source="exact")


def window_column_scores(inputs: AttentionInputs, window_len: int) -> WindowScores:
    """Per-key attention mass averaged over the last `window_len` query rows."""
    n = inputs.seq_len
    if not 1 <= window_len <= n:
        raise ParameterError(f"window_len {window_len} outside [1, {n}]")
    weights = attention_weights(
        inputs,
        CausalMask.window(window_len, n),
        query_rows=range(n - window_len, n),
    )
    return WindowScores(window_len=window_len, column_means=weights.mean(axis=0))


def top_t_indices(values: np.ndarray, t: int) -> np.ndarray:
    """Sorted indices of the min(t, len) largest entries; ties favor lower index."""
    if t < 1:
        raise ParameterError("t must be >= 1")
    values = np.asarray(values, dtype=np.float64)
    order = np.argsort(-values, kind="stable")
    return np.sort(order[: min(t, values.shape[0])])


def approx_semantic_vector(
    scores: WindowScores, values: np.ndarray, t: int
) -> SemanticVector:
    """Windowed top-t semantic vector: sum of C[i] * V[i] over the selected set.

    Weights are the raw column means, deliberately not renormalized.
    """
    values = np.asarray(values, dtype=np.float64)
    if values.shape[0] != scores.column_means.shape[0]:
        raise ParameterError(
            f"values rows {values.shape[0]} != score length {scores.column_means.shape[0]}"
        )
    selected = top_t_indices(scores.column_means, t)
    vec = scores.column_means[selected] @ values[selected]
    return SemanticVector(values=vec, source="approximated")


def select_top_t(scores: WindowScores, t: int) -> WindowScores:
    """Copy of `scores` with the top-t selection filled in."""
    return WindowScores(
        window_len=scores.window_len,
        column_means=scores.column_means,
        top_t=t,
        selected=top_t_indices(scores.column_means, t),
    )


def head_distances(vectors) -> tuple[np.ndarray, np.ndarray]:
    """Layer semantic center (mean vector) and each head's Euclidean distance to it."""
    arrs = [v.values if isinstance(v, SemanticVector) else np.asarray(v) for v in vectors]
    if len(arrs) == 0:
        raise EmptyInputError("head_distances needs at least one vector")
    stacked = np.asarray(arrs, dtype=np.float64)
    center = stacked.mean(axis=0)
    distances = np.linalg.norm(stacked - center, axis=1)
    return center, distances


def _round_half_away(x: float) -> int:
    # values here are always >= 0
    return int(np.floor(x + 0.5))


def heterogeneous_schedule(
    n: int, beta: float, m: int, num_layers: int
) -> HeterogeneitySchedule:
    """Heterogeneous-head count per layer: n*beta at the bottom, m at the top.

    f(r) = n*beta - (n*beta - m) / (R - 1) * r, rounded half-away-from-zero
    and clamped to [0, n]. A single-layer model degenerates to f(0) = m.
    """
    if num_layers < 1:
        raise ParameterError("num_layers must be >= 1")
    if not 0 < beta <= 1:
        raise ParameterError(f"beta {beta} outside (0, 1]")
    if not 0 <= m <= n:
        raise ParameterError(f"m {m} outside [0, {n}]")
    if num_layers == 1:
        counts = (min(max(m, 0), n),)
    else:
        nb = n * beta
        slope = (nb - m) / (num_layers - 1)
        counts = tuple(
            min(max(_round_half_away(nb - slope * r), 0), n)
            for r in range(num_layers)
        )
    return HeterogeneitySchedule(beta=beta, top_m=m, per_layer_counts=counts)


def classify_heads(distances: np.ndarray, f_r: int) -> list[HeadClass]:
    """Mark the f_r - 1 farthest-from-center heads plus the single closest one.

    The closest head is drawn from the remaining (non-heterogeneous) set so
    the result always has exactly f_r heterogeneous heads. Distance ties
    break toward the lower head index.
    """
    distances = np.asarray(distances, dtype=np.float64)
    n = distances.shape[0]
    if not 1 <= f_r <= n:
        raise ParameterError(f"f_r {f_r} outside [1, {n}]")
    classes = [HeadClass.NON_HETEROGENEOUS] * n
    if f_r == n:
        return [HeadClass.HETEROGENEOUS] * n
    by_far = np.argsort(-distances, kind="stable")
    chosen = set(by_far[: f_r - 1].tolist())
    for idx in np.argsort(distances, kind="stable"):
        if int(idx) not in chosen:
            chosen.add(int(idx))
            break
    for idx in chosen:
        classes[idx] = HeadClass.HETEROGENEOUS
    return classes


def build_layer_profiles(
    layer: int,
    heads,
    window_len: int,
    top_t: int,
    f_r: int,
    scores=None,
) -> list[HeadProfile]:
    """Approximated semantic vectors -> distances -> classification for one layer.

    `scores` may carry precomputed window scores; f_r == 0 marks every head
    non-heterogeneous without invoking the ranking rule.
    """
    if scores is None:
        scores = [window_column_scores(h, window_len) for h in heads]
    vectors = [
        approx_semantic_vector(s, h.values, top_t) for s, h in zip(scores, heads)
    ]
    _, distances = head_distances(vectors)
    if f_r == 0:
        classes = [HeadClass.NON_HETEROGENEOUS] * len(heads)
    else:
        classes = classify_heads(distances, f_r)
    return [
        HeadProfile(
            layer=layer,
            head=h,
            semantic=vectors[h],
            distance_to_center=float(distances[h]),
            head_class=classes[h],
        )
        for h in range(len(heads))
    ]
