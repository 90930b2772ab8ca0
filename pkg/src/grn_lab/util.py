"""Small shared helpers."""

from __future__ import annotations

import os


def worker_count() -> int:
    """Worker cap from GRN_LAB_THREADS, defaulting to available parallelism."""
    raw = os.environ.get("GRN_LAB_THREADS")
    if raw:
        try:
            n = int(raw)
        except ValueError as exc:
            raise ValueError(f"GRN_LAB_THREADS must be an integer, got {raw!r}") from exc
        if n < 1:
            raise ValueError(f"GRN_LAB_THREADS must be >= 1, got {n}")
        return n
    return os.cpu_count() or 1
