"""Hierarchical binary quantization codec and its serialized form."""

from .codec import (
    MAX_ROUNDS,
    BitMap,
    BitPlanes,
    IndexMap,
    bound_features,
    dequantize,
    dequantize_truncated,
    flatten_bits,
    pack_indices,
    quantize,
    ste_combine,
    unflatten_bits,
    unpack_indices,
)
from .io import load_bitplanes, save_bitplanes

__all__ = [
    "MAX_ROUNDS",
    "BitPlanes",
    "IndexMap",
    "BitMap",
    "bound_features",
    "quantize",
    "dequantize",
    "dequantize_truncated",
    "ste_combine",
    "pack_indices",
    "unpack_indices",
    "flatten_bits",
    "unflatten_bits",
    "save_bitplanes",
    "load_bitplanes",
]
