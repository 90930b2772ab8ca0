"""Numba-jitted quantizer kernels; semantics identical to the numpy backend.

The inner loops fuse all rounds per element, avoiding the per-round
temporaries of the vectorized path.
"""

from __future__ import annotations

import os

import numpy as np
import numba
from numba import njit, prange

NAME = "numba"

if os.environ.get("GRN_LAB_THREADS"):
    try:
        numba.set_num_threads(min(int(os.environ["GRN_LAB_THREADS"]), numba.config.NUMBA_NUM_THREADS))
    except (ValueError, RuntimeError):
        pass

_JIT = {"cache": True, "nogil": True, "fastmath": False, "parallel": True}


@njit(**_JIT)
def _quantize(values, rounds, planes):
    for j in prange(values.shape[0]):
        center = 0.0
        v = values[j]
        for i in range(rounds):
            step = 2.0 ** -(i + 1)
            if v > center:
                planes[j, i] = 1
                center += step
            else:
                planes[j, i] = 0
                center -= step


def quantize(values: np.ndarray, rounds: int) -> np.ndarray:
    planes = np.empty((values.shape[0], rounds), dtype=np.uint8)
    _quantize(values.astype(np.float64, copy=False), rounds, planes)
    return planes


@njit(**_JIT)
def _dequantize(planes, rounds_used, out):
    for j in prange(planes.shape[0]):
        acc = 0.0
        for i in range(rounds_used):
            w = 2.0 ** -(i + 1)
            if planes[j, i]:
                acc += w
            else:
                acc -= w
        out[j] = acc


def dequantize(planes: np.ndarray, rounds_used: int) -> np.ndarray:
    out = np.empty(planes.shape[0], dtype=np.float64)
    _dequantize(planes, rounds_used, out)
    return out


@njit(**_JIT)
def _pack(planes, out):
    rounds = planes.shape[1]
    for j in prange(planes.shape[0]):
        code = 0
        for i in range(rounds):
            code = (code << 1) | planes[j, i]
        out[j] = code


def pack(planes: np.ndarray) -> np.ndarray:
    out = np.empty(planes.shape[0], dtype=np.int64)
    _pack(planes.astype(np.uint8, copy=False), out)
    return out


@njit(**_JIT)
def _unpack(indices, rounds, planes):
    for j in prange(indices.shape[0]):
        code = indices[j]
        for i in range(rounds):
            planes[j, i] = (code >> (rounds - 1 - i)) & 1


def unpack(indices: np.ndarray, rounds: int) -> np.ndarray:
    planes = np.empty((indices.shape[0], rounds), dtype=np.uint8)
    _unpack(indices.astype(np.int64, copy=False), rounds, planes)
    return planes
