"""Binary serialization of bit-plane arrays.

Layout (all integers little-endian):

    offset  size  field
    0       8     magic  b"HBQPLANE"
    8       1     format version (currently 1)
    9       1     rounds M
    10      1     number of grid dimensions D
    11      4*D   grid extents, uint32 each
    11+4D   ...   packed bits

Bits are packed plane-major: plane 1 over the whole grid in C order, then
plane 2, and so on.  Within each byte the first bit occupies the most
significant position (numpy ``packbits`` order); the final byte is
zero-padded.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from ..errors import DataFormatError
from .codec import MAX_ROUNDS, BitPlanes

MAGIC = b"HBQPLANE"
VERSION = 1


def dump_bitplanes(q: BitPlanes) -> bytes:
    grid = q.grid
    if len(grid) > 255:
        raise ValueError("too many grid dimensions")
    header = MAGIC + struct.pack("<BBB", VERSION, q.rounds, len(grid))
    header += struct.pack(f"<{len(grid)}I", *grid)
    plane_major = np.moveaxis(q.planes, -1, 0)
    bits = np.packbits(plane_major.reshape(-1))
    return header + bits.tobytes()


def save_bitplanes(q: BitPlanes, path: str | Path) -> None:
    Path(path).write_bytes(dump_bitplanes(q))


def _need(blob: bytes, offset: int, count: int, what: str) -> bytes:
    if len(blob) < offset + count:
        raise DataFormatError(
            f"truncated bit-plane blob: wanted {count} bytes for {what} "
            f"at offset {offset}, have {len(blob) - offset}"
        )
    return blob[offset : offset + count]


def parse_bitplanes(blob: bytes) -> BitPlanes:
    if _need(blob, 0, 8, "magic") != MAGIC:
        raise DataFormatError(f"bad magic {blob[:8]!r}, expected {MAGIC!r}")
    version, rounds, ndim = struct.unpack("<BBB", _need(blob, 8, 3, "header"))
    if version != VERSION:
        raise DataFormatError(f"unsupported bit-plane format version {version}")
    if not 1 <= rounds <= MAX_ROUNDS:
        raise DataFormatError(f"rounds {rounds} out of range 1..{MAX_ROUNDS}")
    grid = struct.unpack(f"<{ndim}I", _need(blob, 11, 4 * ndim, "extents"))
    data_offset = 11 + 4 * ndim
    n_bits = rounds * int(np.prod(grid, dtype=np.int64))
    n_bytes = (n_bits + 7) // 8
    payload = _need(blob, data_offset, n_bytes, "packed bits")
    bits = np.unpackbits(np.frombuffer(payload, dtype=np.uint8), count=n_bits)
    planes = np.moveaxis(bits.reshape((rounds,) + grid), 0, -1)
    return BitPlanes(planes.astype(bool))


def load_bitplanes(path: str | Path) -> BitPlanes:
    return parse_bitplanes(Path(path).read_bytes())
