"""Vectorized numpy reference implementation of the quantizer kernels.

All functions work on flat (1-D element) views; callers handle reshaping.
Bucket centers are dyadic rationals, exact in float32 and float64 up to the
supported 16 rounds, so the comparisons below are exact.
"""

from __future__ import annotations

import numpy as np

NAME = "numpy"


def quantize(values: np.ndarray, rounds: int) -> np.ndarray:
    """Coarse-to-fine binary bucketing of values in (-1, 1).

    Round i compares against the running bucket center and emits 1 for
    "above", 0 for "at or below"; the center then moves half a step toward
    the element.  Returns uint8 planes of shape [n, rounds].
    """
    n = values.shape[0]
    planes = np.empty((n, rounds), dtype=np.uint8)
    centers = np.zeros(n, dtype=np.float64)
    values = values.astype(np.float64, copy=False)
    for i in range(rounds):
        above = values > centers
        planes[:, i] = above
        step = 2.0 ** -(i + 1)
        centers += np.where(above, step, -step)
    return planes


def dequantize(planes: np.ndarray, rounds_used: int) -> np.ndarray:
    """Signed dyadic expansion of the first ``rounds_used`` planes, float64."""
    weights = 2.0 ** -(np.arange(1, rounds_used + 1, dtype=np.float64))
    signs = planes[:, :rounds_used].astype(np.float64) * 2.0 - 1.0
    return signs @ weights


def pack(planes: np.ndarray) -> np.ndarray:
    """Planes -> integer codes, first plane is the most significant bit."""
    rounds = planes.shape[1]
    weights = (1 << (rounds - 1 - np.arange(rounds))).astype(np.int64)
    return planes.astype(np.int64) @ weights


def unpack(indices: np.ndarray, rounds: int) -> np.ndarray:
    """Integer codes -> uint8 planes [n, rounds], MSB-first."""
    shifts = rounds - 1 - np.arange(rounds)
    return ((indices[:, None] >> shifts) & 1).astype(np.uint8)
