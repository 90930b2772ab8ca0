"""Backend selection for the hot quantizer kernels.

Two interchangeable implementations exist: a pure-numpy one and a numba
``@njit`` one.  The active default is chosen once per process from the
``GRN_LAB_BACKEND`` environment variable:

    GRN_LAB_BACKEND=numpy   force the vectorized numpy path
    GRN_LAB_BACKEND=numba   force the jitted path (error if numba is missing)
    unset / auto            numba when importable, numpy otherwise

Both backends expose the same four functions over flat arrays:
``quantize(values, rounds)``, ``dequantize(planes, rounds_used)``,
``pack(planes)`` and ``unpack(indices, rounds)``.
"""

from __future__ import annotations

import os
from types import ModuleType

from ..errors import ConfigError

_CACHE: dict[str, ModuleType] = {}


def _load(name: str) -> ModuleType:
    if name in _CACHE:
        return _CACHE[name]
    if name == "numpy":
        from . import _numpy as mod
    elif name == "numba":
        try:
            from . import _numba as mod
        except ImportError as exc:
            raise ConfigError(f"numba backend requested but unavailable: {exc}") from exc
    else:
        raise ConfigError(f"unknown kernel backend {name!r} (use 'numpy', 'numba' or 'auto')")
    _CACHE[name] = mod
    return mod


def available_backends() -> list[str]:
    names = ["numpy"]
    try:
        _load("numba")
        names.append("numba")
    except ConfigError:
        pass
    return names


def get_backend(name: str | None = None) -> ModuleType:
    """Resolve a backend by name; ``None``/'auto' applies the env-var policy."""
    if name is None:
        name = os.environ.get("GRN_LAB_BACKEND", "auto")
    if name == "auto":
        try:
            return _load("numba")
        except ConfigError:
            return _load("numpy")
    return _load(name)


_default: ModuleType | None = None


def default_backend() -> ModuleType:
    global _default
    if _default is None:
        _default = get_backend()
    return _default
