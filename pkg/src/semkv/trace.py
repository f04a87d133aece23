"""Attention-trace file format (.tkv), reader/writer, synthetic generators.

File layout (all little-endian):

    offset  size  field
    0       4     magic b"TKV1"
    4       2     version (u16), currently 1
    6       4     num_layers R (u32)
    10      4     num_heads n (u32)
    14      4     seq_len N (u32)
    18      4     head_dim d (u32)
    22      2     dtype code (u16), 0 = float32
    24      ...   payload: for each layer, for each head: Q then K then V,
                  each an N x d row-major float32 block

Payload size is exactly R * n * 3 * N * d * 4 bytes. Tensors are widened
to float64 in memory for computation; synthetic generators quantize to
float32 at generation time so write -> read round-trips are bit-exact.

Synthetic data comes from the counter-based Philox4x64 generator (NumPy's
``np.random.Philox``) keyed by (seed, stream), so the same profile always
produces the same bytes.
"""

from __future__ import annotations

import io
import os
import struct
from dataclasses import dataclass

import numpy as np

from .errors import (
    ParameterError,
    TraceFormatError,
    TraceTruncationError,
    UnsupportedDtypeError,
)
from .linalg import AttentionInputs

MAGIC = b"TKV1"
VERSION = 1
DTYPE_FLOAT32 = 0
_HEADER = struct.Struct("<4sHIIIIH")
HEADER_BYTES = _HEADER.size  # 24

# Philox stream ids: 0 chooses planted head positions, 1 draws tensor data.
_STREAM_PLANTED = 0
_STREAM_DATA = 1

# Clustered-heads magnitude model: V rows are c_i * direction with
# c_i in [BASE - amp, BASE + amp]. The amplitudes keep planted heads
# provably farthest from the layer's semantic center at zero spread for
# planted <= n/2 with n >= 8, while giving planted heads enough output
# variance that evicting their middle tokens is costly.
_CLUSTER_BASE = 4.0
_CLUSTER_AMP_COMMON = 0.125
_CLUSTER_AMP_PLANTED = 1.5


@dataclass(frozen=True)
class TraceHeader:
    num_layers: int
    num_heads: int
    seq_len: int
    head_dim: int
    version: int = VERSION
    dtype_code: int = DTYPE_FLOAT32

    def __post_init__(self):
        for name in ("num_layers", "num_heads", "seq_len", "head_dim"):
            if getattr(self, name) < 1:
                raise ParameterError(f"{name} must be >= 1")

    @property
    def payload_bytes(self) -> int:
        return self.num_layers * self.num_heads * 3 * self.seq_len * self.head_dim * 4

    @property
    def file_bytes(self) -> int:
        return HEADER_BYTES + self.payload_bytes

    def pack(self) -> bytes:
        return _HEADER.pack(
            MAGIC,
            self.version,
            self.num_layers,
            self.num_heads,
            self.seq_len,
            self.head_dim,
            self.dtype_code,
        )


class AttentionTrace:
    """Per-layer, per-head Q/K/V tensors; the unit of input.

    `data` has shape (R, n, 3, N, d) float64 where axis 2 orders Q, K, V.
    """

    def __init__(self, header: TraceHeader, data: np.ndarray):
        data = np.asarray(data, dtype=np.float64)
        expected = (
            header.num_layers,
            header.num_heads,
            3,
            header.seq_len,
            header.head_dim,
        )
        if data.shape != expected:
            raise TraceFormatError(f"trace data shape {data.shape} != {expected}")
        if not np.all(np.isfinite(data)):
            raise TraceFormatError("trace contains NaN/Inf entries")
        self.header = header
        self.data = data

    @property
    def num_layers(self) -> int:
        return self.header.num_layers

    @property
    def num_heads(self) -> int:
        return self.header.num_heads

    @property
    def seq_len(self) -> int:
        return self.header.seq_len

    @property
    def head_dim(self) -> int:
        return self.header.head_dim

    def head_inputs(self, layer: int, head: int) -> AttentionInputs:
        q, k, v = self.data[layer, head]
        return AttentionInputs(queries=q, keys=k, values=v)

    def layer_heads(self, layer: int) -> list[AttentionInputs]:
        return [self.head_inputs(layer, h) for h in range(self.num_heads)]

    def __eq__(self, other) -> bool:
        if not isinstance(other, AttentionTrace):
            return NotImplemented
        return self.header == other.header and np.array_equal(self.data, other.data)


@dataclass(frozen=True)
class SyntheticProfile:
    """Seeded recipe for a synthetic trace.

    kind:
      uniform-random  i.i.d. standard normal Q/K/V.
      clustered-heads `planted` heads per layer get V aligned to distinct
                      orthogonal directions; the rest share one direction
                      plus `spread` * N(0, 1) off-direction noise.
      planted-needle  one key row per head is aligned with the last
                      `tail_len` query rows, so window scores peak there.
    """

    kind: str
    seed: int = 0
    planted: int = 2
    spread: float = 0.0
    needle_position: int = 7
    needle_strength: float = 10.0
    tail_len: int = 32

    _KINDS = ("uniform-random", "clustered-heads", "planted-needle")

    def __post_init__(self):
        if self.kind not in self._KINDS:
            raise ParameterError(f"unknown profile kind {self.kind!r}")
        if self.seed < 0:
            raise ParameterError("seed must be >= 0")
        if self.kind == "clustered-heads":
            if self.planted < 1:
                raise ParameterError("clustered-heads needs planted >= 1")
            if self.spread < 0:
                raise ParameterError("spread must be >= 0")
        if self.kind == "planted-needle":
            if self.needle_position < 0:
                raise ParameterError("needle_position must be >= 0")
            if self.needle_strength <= 0:
                raise ParameterError("needle_strength must be > 0")
            if self.tail_len < 1:
                raise ParameterError("tail_len must be >= 1")


def _rng(seed: int, stream: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=[seed, stream]))


def clustered_planted_heads(
    profile: SyntheticProfile, num_layers: int, num_heads: int
) -> list[list[int]]:
    """Planted (heterogeneous) head indices per layer, the generator's ground truth."""
    if profile.kind != "clustered-heads":
        raise ParameterError("planted heads only exist for clustered-heads profiles")
    rng = _rng(profile.seed, _STREAM_PLANTED)
    return [
        sorted(rng.permutation(num_heads)[: profile.planted].tolist())
        for _ in range(num_layers)
    ]


def _gen_clustered_layer(
    rng: np.random.Generator,
    planted: list[int],
    num_heads: int,
    seq_len: int,
    head_dim: int,
    spread: float,
) -> np.ndarray:
    if head_dim < len(planted) + 1:
        raise ParameterError(
            f"clustered-heads needs head_dim >= planted + 1, got d={head_dim}"
        )
    out = np.empty((num_heads, 3, seq_len, head_dim))
    rank = {h: i for i, h in enumerate(planted)}
    for h in range(num_heads):
        q = rng.standard_normal((seq_len, head_dim))
        k = rng.standard_normal((seq_len, head_dim))
        if h in rank:
            direction = np.zeros(head_dim)
            direction[1 + rank[h]] = 1.0
            amp = _CLUSTER_AMP_PLANTED
        else:
            direction = np.zeros(head_dim)
            direction[0] = 1.0
            amp = _CLUSTER_AMP_COMMON
        mags = _CLUSTER_BASE + amp * rng.uniform(-1.0, 1.0, size=seq_len)
        v = mags[:, None] * direction[None, :]
        if spread > 0:
            v = v + spread * rng.standard_normal((seq_len, head_dim))
        out[h, 0], out[h, 1], out[h, 2] = q, k, v
    return out


def _gen_needle_layer(
    rng: np.random.Generator,
    profile: SyntheticProfile,
    num_heads: int,
    seq_len: int,
    head_dim: int,
) -> np.ndarray:
    tail = min(profile.tail_len, seq_len)
    if profile.needle_position > seq_len - tail:
        raise ParameterError(
            f"needle at {profile.needle_position} not visible to all of the "
            f"last {tail} rows of a length-{seq_len} sequence"
        )
    out = np.empty((num_heads, 3, seq_len, head_dim))
    for h in range(num_heads):
        q = rng.standard_normal((seq_len, head_dim))
        k = rng.standard_normal((seq_len, head_dim))
        v = rng.standard_normal((seq_len, head_dim))
        axis = rng.standard_normal(head_dim)
        axis /= np.linalg.norm(axis)
        q[seq_len - tail :] = np.sqrt(head_dim) * axis
        k[profile.needle_position] = profile.needle_strength * np.sqrt(head_dim) * axis
        out[h, 0], out[h, 1], out[h, 2] = q, k, v
    return out


def gen_synthetic_trace(
    profile: SyntheticProfile, shape: tuple[int, int, int, int]
) -> AttentionTrace:
    """Build a seeded synthetic trace of shape (R, n, N, d)."""
    num_layers, num_heads, seq_len, head_dim = shape
    header = TraceHeader(num_layers, num_heads, seq_len, head_dim)
    if profile.kind == "clustered-heads" and profile.planted >= num_heads:
        raise ParameterError("clustered-heads needs planted < num_heads")
    rng = _rng(profile.seed, _STREAM_DATA)
    layers = []
    if profile.kind == "clustered-heads":
        planted_per_layer = clustered_planted_heads(profile, num_layers, num_heads)
    for r in range(num_layers):
        if profile.kind == "uniform-random":
            layer = rng.standard_normal((num_heads, 3, seq_len, head_dim))
        elif profile.kind == "clustered-heads":
            layer = _gen_clustered_layer(
                rng, planted_per_layer[r], num_heads, seq_len, head_dim, profile.spread
            )
        else:
            layer = _gen_needle_layer(rng, profile, num_heads, seq_len, head_dim)
        layers.append(layer)
    data = np.stack(layers, axis=0)
    # quantize once so in-memory floats are exactly the stored float32 values
    data = data.astype(np.float32).astype(np.float64)
    return AttentionTrace(header, data)


def _open_sink(destination):
    if isinstance(destination, (str, os.PathLike)):
        return open(destination, "wb"), True
    return destination, False


def write_trace(trace: AttentionTrace, destination) -> int:
    """Write a trace to a path or binary sink; returns the byte count."""
    sink, owned = _open_sink(destination)
    try:
        written = sink.write(trace.header.pack())
        payload = np.ascontiguousarray(trace.data, dtype="<f4")
        written += sink.write(payload.tobytes())
    finally:
        if owned:
            sink.close()
    if written != trace.header.file_bytes:
        raise IOError(
            f"short write: {written} of {trace.header.file_bytes} bytes"
        )
    return written


def read_trace(source) -> AttentionTrace:
    """Read a trace from a path, binary stream, or bytes."""
    if isinstance(source, (bytes, bytearray)):
        return _read_stream(io.BytesIO(source))
    if isinstance(source, (str, os.PathLike)):
        with open(source, "rb") as f:
            return _read_stream(f)
    return _read_stream(source)


def _read_stream(stream) -> AttentionTrace:
    raw = stream.read(HEADER_BYTES)
    if len(raw) < HEADER_BYTES:
        raise TraceTruncationError(HEADER_BYTES, len(raw), what="header")
    magic, version, layers, heads, seq_len, head_dim, dtype_code = _HEADER.unpack(raw)
    if magic != MAGIC:
        raise TraceFormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if dtype_code != DTYPE_FLOAT32:
        raise UnsupportedDtypeError(f"unsupported dtype code {dtype_code}")
    try:
        header = TraceHeader(layers, heads, seq_len, head_dim, version, dtype_code)
    except ParameterError as exc:
        raise TraceFormatError(str(exc)) from exc
    payload = stream.read(header.payload_bytes)
    if len(payload) < header.payload_bytes:
        raise TraceTruncationError(header.payload_bytes, len(payload))
    flat = np.frombuffer(payload, dtype="<f4")
    data = flat.reshape(layers, heads, 3, seq_len, head_dim).astype(np.float64)
    return AttentionTrace(header, data)
