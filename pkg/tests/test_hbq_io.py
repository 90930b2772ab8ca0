from pathlib import Path

import numpy as np
import pytest

from grn_lab import hbq
from grn_lab.errors import DataFormatError
from grn_lab.hbq.io import dump_bitplanes, parse_bitplanes
from grn_lab.numerics import Rng

GOLDEN = Path(__file__).parent / "golden" / "example.hbq"

# quantize([0.3, -0.2, 0.9, -0.95] on a (1,2,2,1) grid, 3 rounds):
# magic, version 1, rounds 3, 4 extents, then plane-major bits
# 1010 0110 1110 packed MSB-first.
GOLDEN_HEX = "484251504c414e4501030401000000020000000200000001000000a6e0"


def golden_planes() -> hbq.BitPlanes:
    x = np.array([0.3, -0.2, 0.9, -0.95]).reshape(1, 2, 2, 1)
    return hbq.quantize(x, 3)


class TestGoldenFile:
    def test_dump_matches_frozen_bytes(self):
        assert dump_bitplanes(golden_planes()).hex() == GOLDEN_HEX

    def test_golden_file_on_disk(self):
        assert GOLDEN.read_bytes().hex() == GOLDEN_HEX
        assert hbq.load_bitplanes(GOLDEN) == golden_planes()

    def test_reconstruction_of_golden(self):
        values = hbq.dequantize(hbq.load_bitplanes(GOLDEN))
        np.testing.assert_allclose(
            values.ravel(), [0.375, -0.125, 0.875, -0.875]
        )


class TestRoundTrip:
    @pytest.mark.parametrize("rounds", [1, 5, 16])
    def test_random(self, rounds, tmp_path):
        planes = hbq.BitPlanes(Rng(rounds).uniform((2, 3, 4, 2, rounds)) < 0.5)
        path = tmp_path / "x.hbq"
        hbq.save_bitplanes(planes, path)
        assert hbq.load_bitplanes(path) == planes

    def test_index_map_through_planes(self, tmp_path):
        codes = Rng(9).integers(16, (3, 3, 3, 2))
        planes = hbq.unpack_indices(codes, 4)
        path = tmp_path / "y.hbq"
        hbq.save_bitplanes(planes, path)
        loaded = hbq.load_bitplanes(path)
        np.testing.assert_array_equal(hbq.pack_indices(loaded).values, codes)


class TestErrors:
    def test_bad_magic(self):
        blob = bytearray(GOLDEN.read_bytes())
        blob[0] ^= 0xFF
        with pytest.raises(DataFormatError, match="magic"):
            parse_bitplanes(bytes(blob))

    def test_bad_version(self):
        blob = bytearray(GOLDEN.read_bytes())
        blob[8] = 99
        with pytest.raises(DataFormatError, match="version"):
            parse_bitplanes(bytes(blob))

    def test_truncation_reports_offset(self):
        blob = GOLDEN.read_bytes()
        with pytest.raises(DataFormatError, match="offset"):
            parse_bitplanes(blob[:-1])
        with pytest.raises(DataFormatError, match="offset"):
            parse_bitplanes(blob[:10])
