"""Dense linear-algebra kernels: masked attention, PCA, spectral norm.

Matrices are 2-D float64 C-order ndarrays throughout. Everything computes in
float64 regardless of how traces are stored, so results do not depend on
accumulation order quirks of narrower types.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, EmptyInputError

POWER_ITER_CAP = 1000
POWER_ITER_TOL = 1e-12


def _as_matrix(a, name: str) -> np.ndarray:
    m = np.asarray(a, dtype=np.float64)
    if m.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {m.shape}")
    return m


def _require_finite(a: np.ndarray, name: str) -> np.ndarray:
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} contains NaN/Inf entries")
    return a


@dataclass(frozen=True)
class AttentionInputs:
    """Per-head query/key/value states, each of shape (seq_len, head_dim)."""

    queries: np.ndarray
    keys: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        q = _as_matrix(self.queries, "queries")
        k = _as_matrix(self.keys, "keys")
        v = _as_matrix(self.values, "values")
        object.__setattr__(self, "queries", q)
        object.__setattr__(self, "keys", k)
        object.__setattr__(self, "values", v)
        if q.shape[0] == 0 or q.shape[1] == 0:
            raise EmptyInputError("attention inputs need seq_len >= 1 and head_dim >= 1")
        if not (q.shape == k.shape == v.shape):
            raise DimensionError(
                f"Q/K/V shapes differ: {q.shape}, {k.shape}, {v.shape}"
            )
        for name, m in (("queries", q), ("keys", k), ("values", v)):
            _require_finite(m, name)

    @property
    def seq_len(self) -> int:
        return self.queries.shape[0]

    @property
    def head_dim(self) -> int:
        return self.queries.shape[1]


@dataclass(frozen=True)
class CausalMask:
    """Causal visibility for a block of query rows against key columns.

    Entry (i, j) is allowed iff j <= offset + i, where `offset` is the
    absolute sequence position of the first query row.
    """

    query_rows: int
    key_cols: int
    offset: int = 0

    def __post_init__(self):
        if self.query_rows < 1 or self.key_cols < 1:
            raise EmptyInputError("mask needs at least one row and one column")
        if self.offset < 0:
            raise DimensionError("mask offset must be >= 0")

    @classmethod
    def full(cls, seq_len: int) -> "CausalMask":
        return cls(query_rows=seq_len, key_cols=seq_len, offset=0)

    @classmethod
    def window(cls, window_len: int, seq_len: int) -> "CausalMask":
        """Mask for the last `window_len` query rows of a `seq_len` sequence."""
        if not 1 <= window_len <= seq_len:
            raise DimensionError(
                f"window_len {window_len} outside [1, {seq_len}]"
            )
        return cls(query_rows=window_len, key_cols=seq_len, offset=seq_len - window_len)

    def allowed(self) -> np.ndarray:
        rows = np.arange(self.query_rows)[:, None] + self.offset
        cols = np.arange(self.key_cols)[None, :]
        return cols <= rows


def masked_softmax(scores: np.ndarray, allowed: np.ndarray) -> np.ndarray:
    """Row-wise softmax over allowed entries; blocked entries are exactly 0.

    Subtracts the per-row max of the allowed entries before exponentiating
    so large score magnitudes cannot overflow.
    """
    scores = _as_matrix(scores, "scores")
    if allowed.shape != scores.shape:
        raise DimensionError(
            f"mask shape {allowed.shape} does not match scores {scores.shape}"
        )
    if not allowed.any(axis=1).all():
        raise EmptyInputError("every row must have at least one allowed entry")
    neg = np.where(allowed, scores, -np.inf)
    shifted = neg - np.max(neg, axis=1, keepdims=True)
    expd = np.exp(shifted)
    out = expd / np.sum(expd, axis=1, keepdims=True)
    return _require_finite(out, "softmax output")


def attention_weights(
    inputs: AttentionInputs,
    mask: CausalMask,
    query_rows: range | None = None,
) -> np.ndarray:
    """Row-stochastic attention matrix softmax(Q K^T / sqrt(d)) under `mask`.

    `query_rows` selects a contiguous block of query rows (default: all);
    the mask must describe exactly that block.
    """
    n = inputs.seq_len
    if query_rows is None:
        query_rows = range(0, n)
    if len(query_rows) == 0:
        raise EmptyInputError("query_rows selects no rows")
    if query_rows.step != 1 or query_rows.start < 0 or query_rows.stop > n:
        raise DimensionError(f"query_rows {query_rows} outside [0, {n}) or non-contiguous")
    if mask.query_rows != len(query_rows) or mask.key_cols != n:
        raise DimensionError(
            f"mask is {mask.query_rows}x{mask.key_cols}, "
            f"selection needs {len(query_rows)}x{n}"
        )
    if mask.offset != query_rows.start:
        raise DimensionError(
            f"mask offset {mask.offset} does not match first query row {query_rows.start}"
        )
    q = inputs.queries[query_rows.start : query_rows.stop]
    scores = (q @ inputs.keys.T) / np.sqrt(float(inputs.head_dim))
    return masked_softmax(scores, mask.allowed())


def attention_output(weights: np.ndarray, values: np.ndarray) -> np.ndarray:
    """Weighted sum of value rows: result[i] = sum_j weights[i, j] * values[j]."""
    w = _as_matrix(weights, "weights")
    v = _as_matrix(values, "values")
    if w.shape[1] != v.shape[0]:
        raise DimensionError(
            f"weights cols {w.shape[1]} != values rows {v.shape[0]}"
        )
    return _require_finite(w @ v, "attention output")


def _dominant_eigpair(sym: np.ndarray, need_vector: bool = False) -> tuple[float, np.ndarray]:
    """Largest eigenpair of a symmetric PSD matrix by power iteration.

    Deterministic ramp start vector; stops once the Rayleigh quotient has
    settled to 1e-12 relative, capped at POWER_ITER_CAP iterations. The
    quotient converges twice as fast as the iterate, so callers that use
    the eigenvector itself (pca_2d) pass need_vector=True to also require
    the iterate to stop moving.
    """
    m = sym.shape[0]
    v = np.arange(1.0, m + 1.0)
    v /= np.linalg.norm(v)
    lam = float(v @ sym @ v)
    for _ in range(POWER_ITER_CAP):
        w = sym @ v
        norm = np.linalg.norm(w)
        if norm == 0.0:
            return 0.0, v
        v_new = w / norm
        lam_new = float(v_new @ sym @ v_new)
        settled = abs(lam_new - lam) <= POWER_ITER_TOL * max(abs(lam_new), 1e-300)
        if need_vector:
            settled = settled and np.max(np.abs(v_new - v)) <= 1e-10
        v, lam = v_new, lam_new
        if settled:
            return lam, v
    return lam, v


def _fix_sign(axis: np.ndarray) -> np.ndarray:
    """Flip so the first loading with magnitude > 1e-12 is positive."""
    for x in axis:
        if abs(x) > 1e-12:
            return axis if x > 0 else -axis
    return axis


def pca_2d(points) -> np.ndarray:
    """Project d-dim points onto their top-2 principal axes.

    Axes are eigenvectors of the mean-centered covariance, ordered by
    descending eigenvalue, each sign-fixed so its first nonzero loading is
    positive. Returns an (n_points, 2) array.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim == 1:
        pts = pts[:, None] if pts.size else pts.reshape(0, 0)
    if pts.shape[0] == 0:
        raise EmptyInputError("pca_2d needs at least one point")
    _require_finite(pts, "points")
    centered = pts - pts.mean(axis=0)
    d = pts.shape[1]
    if d == 1:
        coords = np.zeros((pts.shape[0], 2))
        coords[:, 0] = _fix_sign(np.ones(1))[0] * centered[:, 0]
        return coords
    cov = (centered.T @ centered) / pts.shape[0]
    lam1, v1 = _dominant_eigpair(cov, need_vector=True)
    v1 = _fix_sign(v1)
    deflated = cov - lam1 * np.outer(v1, v1)
    _, v2 = _dominant_eigpair(deflated, need_vector=True)
    # re-orthogonalize against v1; fall back to a canonical complement if
    # the deflated matrix was (numerically) zero, e.g. rank-1 data
    v2 = v2 - (v2 @ v1) * v1
    norm = np.linalg.norm(v2)
    if norm < 1e-12:
        for i in range(d):
            cand = np.zeros(d)
            cand[i] = 1.0
            cand -= (cand @ v1) * v1
            norm = np.linalg.norm(cand)
            if norm > 1e-6:
                v2 = cand
                break
    v2 /= np.linalg.norm(v2)
    v2 = _fix_sign(v2)
    return centered @ np.column_stack([v1, v2])


def spectral_norm(matrix) -> float:
    """Largest singular value, via power iteration on W^T W.

    An all-zero matrix returns 0.0.
    """
    w = _as_matrix(matrix, "matrix")
    if w.size == 0:
        raise EmptyInputError("spectral_norm needs a non-empty matrix")
    _require_finite(w, "matrix")
    if not w.any():
        return 0.0
    gram = w.T @ w
    lam, _ = _dominant_eigpair(gram)
    return float(np.sqrt(max(lam, 0.0)))
