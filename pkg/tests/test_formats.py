import json

import numpy as np
import pytest

from voxelsam import formats
from voxelsam.errors import (DimensionMismatch, UnreadableFile,
                             UnsupportedFormat)
from voxelsam.volume_io import Volume3D, load_volume, save_volume


@pytest.fixture()
def payload(rng):
    return rng.integers(0, 60000, size=(6, 5, 4)).astype(np.uint16)


SPACING = (0.25, 0.5, 2.0)


class TestRoundTrips:
    @pytest.mark.parametrize("name", ["v.tiff", "v.nrrd", "v.raw"])
    def test_bit_exact_round_trip(self, tmp_path, payload, name):
        path = tmp_path / name
        formats.write_any(path, payload, SPACING)
        back, spacing = formats.read_any(path)
        assert np.array_equal(back, payload)
        assert back.dtype == payload.dtype
        assert spacing == pytest.approx(SPACING)

    @pytest.mark.parametrize("dtype", [np.uint8, np.uint16, np.float32])
    def test_supported_dtypes(self, tmp_path, rng, dtype):
        arr = rng.random((3, 4, 5)).astype(dtype) if dtype == np.float32 \
            else rng.integers(0, 100, (3, 4, 5)).astype(dtype)
        for name in ("d.tiff", "d.nrrd", "d.raw"):
            formats.write_any(tmp_path / name, arr, (1, 1, 1))
            back, _ = formats.read_any(tmp_path / name)
            assert back.dtype == arr.dtype
            assert np.array_equal(back, arr)

    def test_volume_level_round_trip(self, tmp_path, payload):
        vol = Volume3D.from_array(payload, SPACING)
        for name in ("v.tiff", "v.nrrd", "v.raw"):
            save_volume(tmp_path / name, vol)
            back = load_volume(tmp_path / name)
            assert back.dims == vol.dims
            assert back.spacing == pytest.approx(vol.spacing)
            assert np.array_equal(back.data, vol.data)


class TestSniffing:
    def test_suffixes(self):
        assert formats.sniff_format("a.tif") == "tiff"
        assert formats.sniff_format("a.TIFF") == "tiff"
        assert formats.sniff_format("a.nrrd") == "nrrd"
        assert formats.sniff_format("a.raw") == "raw"

    def test_explicit_fmt_overrides(self, tmp_path, payload):
        path = tmp_path / "volume.bin"
        formats.write_any(path, payload, SPACING, fmt="raw")
        back, _ = formats.read_any(path, fmt="raw")
        assert np.array_equal(back, payload)

    def test_unknown_format(self, tmp_path):
        with pytest.raises(UnsupportedFormat):
            formats.read_any(tmp_path / "volume.xyz")


class TestNrrd:
    def test_header_fields(self, tmp_path, payload):
        path = tmp_path / "v.nrrd"
        formats.write_any(path, payload, SPACING)
        head = path.read_bytes().split(b"\n\n", 1)[0].decode()
        assert head.startswith("NRRD")
        assert "sizes: 4 5 6" in head
        assert "type: unsigned short" in head
        assert "encoding: raw" in head
        assert "endian: little" in head

    def test_reads_space_directions(self, tmp_path, payload):
        path = tmp_path / "v.nrrd"
        header = ("NRRD0004\ntype: uint16\ndimension: 3\nsizes: 4 5 6\n"
                  "space directions: (0.25,0,0) (0,0.5,0) (0,0,2.0)\n"
                  "encoding: raw\nendian: little\n\n")
        path.write_bytes(header.encode() + payload.astype("<u2").tobytes())
        back, spacing = formats.read_nrrd(path)
        assert np.array_equal(back, payload)
        assert spacing == pytest.approx((0.25, 0.5, 2.0))

    def test_type_aliases(self, tmp_path, payload):
        path = tmp_path / "v.nrrd"
        header = ("NRRD0004\ntype: unsigned short\ndimension: 3\nsizes: 4 5 6\n"
                  "encoding: raw\n\n")
        path.write_bytes(header.encode() + payload.astype("<u2").tobytes())
        back, _ = formats.read_nrrd(path)
        assert back.dtype == np.uint16

    def test_rejects_gzip_encoding(self, tmp_path):
        path = tmp_path / "v.nrrd"
        path.write_bytes(b"NRRD0004\ntype: uint8\ndimension: 3\nsizes: 1 1 1\n"
                         b"encoding: gzip\n\nx")
        with pytest.raises(UnsupportedFormat):
            formats.read_nrrd(path)

    def test_payload_size_mismatch(self, tmp_path):
        path = tmp_path / "v.nrrd"
        path.write_bytes(b"NRRD0004\ntype: uint8\ndimension: 3\nsizes: 4 5 6\n"
                         b"encoding: raw\n\nshort")
        with pytest.raises(DimensionMismatch):
            formats.read_nrrd(path)


class TestRaw:
    def test_sidecar_contents(self, tmp_path, payload):
        path = tmp_path / "v.raw"
        formats.write_any(path, payload, SPACING)
        doc = json.loads((tmp_path / "v.json").read_text())
        assert doc["dims"] == [4, 5, 6]
        assert doc["dtype"] == "uint16"
        assert doc["spacing"] == list(SPACING)
        assert (tmp_path / "v.raw").stat().st_size == payload.nbytes

    def test_payload_dims_mismatch(self, tmp_path, payload):
        path = tmp_path / "v.raw"
        formats.write_any(path, payload, SPACING)
        doc = json.loads((tmp_path / "v.json").read_text())
        doc["dims"] = [4, 5, 7]
        (tmp_path / "v.json").write_text(json.dumps(doc))
        with pytest.raises(DimensionMismatch):
            formats.read_raw(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(UnreadableFile):
            formats.read_any(tmp_path / "absent.raw")


class TestTiff:
    def test_pages_are_z_slices(self, tmp_path, payload):
        path = tmp_path / "v.tiff"
        formats.write_any(path, payload, SPACING)
        back, _ = formats.read_any(path)
        assert back.shape == (6, 5, 4)
        assert np.array_equal(back[3], payload[3])

    def test_unreadable_garbage(self, tmp_path):
        path = tmp_path / "v.tiff"
        path.write_bytes(b"not a tiff at all")
        with pytest.raises(UnreadableFile):
            formats.read_tiff(path)


class TestDtypeGuard:
    def test_unsupported_dtype_rejected(self):
        with pytest.raises(UnsupportedFormat):
            formats.check_dtype("complex128")
        with pytest.raises(UnsupportedFormat):
            Volume3D.from_array(np.zeros((2, 2, 2), dtype=np.complex64))
