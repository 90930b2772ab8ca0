"""Evaluation metrics: reference-matching accuracy, exact recovery,
dequantized reconstruction error, and step statistics."""

from __future__ import annotations

import numpy as np

from .errors import ConfigError
from .hbq import BitPlanes, dequantize, unflatten_bits, unpack_indices
from .synthdata import DatasetSpec

__all__ = [
    "tokens_to_planes",
    "best_match",
    "token_accuracy",
    "reconstruction_mse",
    "step_histogram",
]


def tokens_to_planes(flat_map: np.ndarray, spec: DatasetSpec, variant: str) -> BitPlanes:
    """Lift a flat [n_pos, c_eff] token map back into grid-shaped bit planes."""
    spatial = spec.grid[:3]
    if variant == "ind":
        values = flat_map.reshape(spatial + (spec.channels,))
        return unpack_indices(values, spec.rounds)
    if variant == "bit":
        values = flat_map.reshape(spatial + (spec.channels * spec.rounds,))
        return unflatten_bits(values, spec.channels, spec.rounds)
    raise ConfigError(f"variant must be 'ind' or 'bit', got {variant!r}")


def best_match(tokens: np.ndarray, references: np.ndarray) -> tuple[float, int]:
    """Highest token-match fraction against a stack of reference maps.

    Returns (accuracy, index of the best reference).
    """
    if references.ndim != tokens.ndim + 1 or references.shape[1:] != tokens.shape:
        raise ValueError(
            f"references {references.shape} do not stack over tokens {tokens.shape}"
        )
    matches = (references == tokens[None]).reshape(references.shape[0], -1).mean(axis=1)
    idx = int(np.argmax(matches))
    return float(matches[idx]), idx


def token_accuracy(tokens: np.ndarray, references: np.ndarray) -> float:
    return best_match(tokens, references)[0]


def reconstruction_mse(tokens: np.ndarray, reference: np.ndarray, spec: DatasetSpec, variant: str) -> float:
    """MSE between the dequantized features of two token maps."""
    a = dequantize(tokens_to_planes(tokens, spec, variant))
    b = dequantize(tokens_to_planes(reference, spec, variant))
    return float(np.mean(np.square(a - b)))


def step_histogram(step_counts) -> dict[int, int]:
    """Counts of trajectories per total-step value, keyed by step count."""
    values, counts = np.unique(np.asarray(list(step_counts), dtype=np.int64), return_counts=True)
    return {int(v): int(c) for v, c in zip(values, counts)}
