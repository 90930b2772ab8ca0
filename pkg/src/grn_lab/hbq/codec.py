"""Hierarchical binary quantization: an M-round coarse-to-fine binary
bucketing of features bounded to (-1, 1).

Round i compares each element against a running bucket center (starting at 0)
and emits a binary label: 1 above the center, 0 at or below it.  The center
then moves by +/- 2^-i toward the element.  Reconstruction is the signed
dyadic sum of the labels,

    value_hat = sum_i sign(label_i) * 2^-i,   sign(0) = -1, sign(1) = +1,

which pins the per-element error below 2^-M after M rounds.  Labels may be
viewed three ways: per-round boolean planes, packed integer codes (round 1 is
the most significant bit, so code order matches reconstructed-value order),
or a flat channel-major bit layout.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..kernels import default_backend

MAX_ROUNDS = 16

# tanh outputs that round to +/-1.0 are pulled back to this open-interval
# bound; 2^-20 sits below the finest supported quantizer resolution (2^-16).
_SATURATION_BOUND = 1.0 - 2.0**-20


@dataclass(frozen=True)
class BitPlanes:
    """Binary labels of all rounds: boolean array [*grid, rounds]."""

    planes: np.ndarray

    def __post_init__(self):
        p = self.planes
        if p.ndim < 2:
            raise ValueError("planes need at least one grid axis plus the round axis")
        if p.dtype != np.bool_:
            raise ValueError(f"planes must be boolean, got {p.dtype}")
        if not 1 <= p.shape[-1] <= MAX_ROUNDS:
            raise ValueError(f"rounds must lie in 1..{MAX_ROUNDS}, got {p.shape[-1]}")

    @property
    def rounds(self) -> int:
        return self.planes.shape[-1]

    @property
    def grid(self) -> tuple[int, ...]:
        return self.planes.shape[:-1]

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, BitPlanes)
            and self.planes.shape == other.planes.shape
            and bool(np.array_equal(self.planes, other.planes))
        )


@dataclass(frozen=True)
class IndexMap:
    """Packed integer codes in {0, ..., 2^rounds - 1} over the grid."""

    values: np.ndarray
    rounds: int

    def __post_init__(self):
        if not 1 <= self.rounds <= MAX_ROUNDS:
            raise ValueError(f"rounds must lie in 1..{MAX_ROUNDS}, got {self.rounds}")
        v = self.values
        if not np.issubdtype(v.dtype, np.integer):
            raise ValueError(f"index values must be integers, got {v.dtype}")
        if v.size and (v.min() < 0 or v.max() >= (1 << self.rounds)):
            raise ValueError(f"index values must lie in [0, 2^{self.rounds})")


@dataclass(frozen=True)
class BitMap:
    """Channel-major flat bit layout: {0,1} array [*spatial, channels*rounds]."""

    values: np.ndarray

    def __post_init__(self):
        v = self.values
        if not np.issubdtype(v.dtype, np.integer):
            raise ValueError(f"bit values must be integers, got {v.dtype}")
        if v.size and (v.min() < 0 or v.max() > 1):
            raise ValueError("bit values must be 0 or 1")


def bound_features(raw: np.ndarray) -> np.ndarray:
    """Squash unbounded features into (-1, 1) via tanh.

    Values whose tanh saturates to +/-1.0 in floating point are nudged to
    +/-(1 - 2^-20) so the quantizer's open-interval domain holds.
    """
    raw = np.asarray(raw)
    if not np.all(np.isfinite(raw)):
        raise ValueError("bound_features: input must be finite")
    out = np.tanh(raw)
    return np.clip(out, -_SATURATION_BOUND, _SATURATION_BOUND)


def quantize(features: np.ndarray, rounds: int) -> BitPlanes:
    """Quantize features in (-1, 1) into ``rounds`` binary planes.

    Ties (an element exactly on a bucket center) take label 0.
    """
    features = np.asarray(features)
    if not 1 <= rounds <= MAX_ROUNDS:
        raise ValueError(f"rounds must lie in 1..{MAX_ROUNDS}, got {rounds}")
    if not np.all(np.isfinite(features)):
        raise ValueError("quantize: features must be finite")
    if features.size and np.abs(features).max() >= 1.0:
        raise ValueError("quantize: features must lie strictly inside (-1, 1)")
    flat = features.reshape(-1).astype(np.float64, copy=False)
    planes = default_backend().quantize(flat, rounds)
    return BitPlanes(planes.reshape(features.shape + (rounds,)).astype(bool))


def dequantize(q: BitPlanes) -> np.ndarray:
    """Reconstruct the quantized feature from all rounds (float64).

    Outputs are odd multiples of 2^-rounds with magnitude <= 1 - 2^-rounds.
    """
    return dequantize_truncated(q, q.rounds)


def dequantize_truncated(q: BitPlanes, rounds_used: int) -> np.ndarray:
    """Reconstruct from only the first ``rounds_used`` planes."""
    if not 1 <= rounds_used <= q.rounds:
        raise ValueError(f"rounds_used must lie in 1..{q.rounds}, got {rounds_used}")
    flat = q.planes.reshape(-1, q.rounds).astype(np.uint8)
    out = default_backend().dequantize(flat, rounds_used)
    return out.reshape(q.grid)


def ste_combine(features: np.ndarray, quantized: np.ndarray) -> np.ndarray:
    """Straight-through pass: forward value is ``quantized``, gradient is not.

    Computed as features + stop_gradient(quantized - features); the residual
    is a constant, so any downstream gradient flows to ``features`` unchanged
    (identity).  With no autodiff tape here, that contract is the caller's:
    backpropagate through the output as if it were ``features`` itself.
    """
    features = np.asarray(features)
    quantized = np.asarray(quantized)
    if features.shape != quantized.shape:
        raise ValueError(
            f"shape mismatch: features {features.shape} vs quantized {quantized.shape}"
        )
    residual = quantized.astype(np.float64) - features.astype(np.float64)
    return (features + residual).astype(features.dtype, copy=False)


def pack_indices(q: BitPlanes) -> IndexMap:
    """Pack planes into integer codes; round 1 is the most significant bit."""
    flat = q.planes.reshape(-1, q.rounds).astype(np.uint8)
    codes = default_backend().pack(flat)
    return IndexMap(codes.reshape(q.grid), q.rounds)


def unpack_indices(y: IndexMap | np.ndarray, rounds: int | None = None) -> BitPlanes:
    """Inverse of ``pack_indices``; raises on codes >= 2^rounds."""
    if isinstance(y, IndexMap):
        values, rounds = y.values, y.rounds
    else:
        if rounds is None:
            raise ValueError("rounds is required when unpacking a bare array")
        values = np.asarray(y)
        if values.size and (values.min() < 0 or values.max() >= (1 << rounds)):
            raise ValueError(f"index values must lie in [0, 2^{rounds})")
    planes = default_backend().unpack(values.reshape(-1), rounds)
    return BitPlanes(planes.reshape(values.shape + (rounds,)).astype(bool))


def flatten_bits(q: BitPlanes) -> BitMap:
    """Merge the channel and round axes: bit (c, i) lands at c*rounds + i."""
    if q.planes.ndim < 3:
        raise ValueError("flatten_bits needs a channel axis before the round axis")
    *spatial, channels, rounds = q.planes.shape
    flat = q.planes.reshape(*spatial, channels * rounds)
    return BitMap(flat.astype(np.int64))


def unflatten_bits(b: BitMap | np.ndarray, channels: int, rounds: int) -> BitPlanes:
    """Inverse of ``flatten_bits`` for the given channel count and rounds."""
    values = b.values if isinstance(b, BitMap) else np.asarray(b)
    if values.shape[-1] != channels * rounds:
        raise ValueError(
            f"last extent {values.shape[-1]} != channels*rounds = {channels * rounds}"
        )
    planes = values.reshape(*values.shape[:-1], channels, rounds)
    return BitPlanes(planes.astype(bool))
