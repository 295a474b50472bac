import json
import struct

import numpy as np
import pytest

from voxelsam import embedding_cache as ec
from voxelsam.errors import (Cancelled, CorruptPayload, IncompleteCache,
                             MissingEntry, ScaleMissing, VersionMismatch)
from voxelsam.model_runtime import encode, resize_scale
from voxelsam.volume_io import (Axis, enhance_contrast, extract_slice,
                                slice_shape)


@pytest.fixture()
def cache_path(tmp_path):
    return tmp_path / "vol.vsemb"


def build(vol, encoder, path, **kw):
    kw.setdefault("axes", "xyz")
    axes = kw.pop("axes")
    return ec.precompute(vol, axes, encoder, path, **kw)


def header_end(blob: bytes) -> int:
    _, _, header_len = struct.unpack_from("<4sII", blob, 0)
    return struct.calcsize("<4sII") + header_len


class TestRoundTrip:
    def test_entry_count_covers_all_axes(self, small_volume, stub_pair, cache_path):
        with build(small_volume, stub_pair.encoder, cache_path) as cache:
            nx, ny, nz = small_volume.dims
            assert sorted(cache.entries()) == (
                [(Axis.X, i) for i in range(nx)]
                + [(Axis.Y, i) for i in range(ny)]
                + [(Axis.Z, i) for i in range(nz)])
            assert cache.header["entry_count"] == nx + ny + nz
            assert (Axis.Z, 0) in cache and (Axis.Z, nz) not in cache

    def test_single_axis_subset(self, small_volume, stub_pair, cache_path):
        with build(small_volume, stub_pair.encoder, cache_path, axes="z") as cache:
            assert cache.axes == [Axis.Z]
            assert len(list(cache.entries())) == small_volume.dims[2]
            with pytest.raises(MissingEntry):
                cache.get(Axis.X, 0)

    def test_payload_matches_direct_encode_float32(self, small_volume, stub_pair,
                                                   cache_path):
        enc = stub_pair.encoder
        with build(small_volume, enc, cache_path, scalar_type="float32",
                   enhance="none") as cache:
            for axis, index in cache.entries():
                img = enhance_contrast(extract_slice(small_volume, axis, index),
                                       "none")
                assert np.array_equal(cache.get(axis, index), encode(enc, img))

    def test_float16_is_exact_half_cast(self, small_volume, stub_pair, cache_path):
        enc = stub_pair.encoder
        with build(small_volume, enc, cache_path, scalar_type="float16",
                   enhance="none") as cache:
            assert cache.scalar_type == "float16"
            img = enhance_contrast(extract_slice(small_volume, Axis.Z, 2), "none")
            exact = encode(enc, img)
            got = cache.get(Axis.Z, 2)
            assert got.dtype == np.float32
            assert np.array_equal(got, exact.astype(np.float16).astype(np.float32))
            assert np.max(np.abs(got - exact)) < 2 ** -10 * np.max(np.abs(exact)) + 2 ** -20

    def test_header_fields(self, small_volume, stub_pair, cache_path):
        with build(small_volume, stub_pair.encoder, cache_path,
                   enhance="clahe", enhance_params={"clip_limit": 3.0}) as cache:
            h = cache.header
            assert h["dims"] == list(small_volume.dims)
            assert h["axes"] == ["x", "y", "z"]
            assert h["embedding_shape"] == list(stub_pair.encoder.embedding_shape)
            assert h["model_hash"] == stub_pair.encoder.model_hash
            assert h["preprocessing"] == {"method": "clahe", "params": {"clip_limit": 3.0}}
            assert h["complete"] is True
            for letter, extent in zip("xyz", small_volume.dims):
                assert len(h["scale_table"][letter]) == extent

    def test_scale_for(self, small_volume, stub_pair, cache_path):
        with build(small_volume, stub_pair.encoder, cache_path, axes="z") as cache:
            shape = slice_shape(small_volume.dims, Axis.Z)
            expected = resize_scale(shape, stub_pair.encoder.input_side)
            assert cache.scale_for(Axis.Z, 0) == pytest.approx(expected)
            with pytest.raises(ScaleMissing):
                cache.scale_for(Axis.X, 0)
            with pytest.raises(ScaleMissing):
                cache.scale_for(Axis.Z, small_volume.dims[2])

    def test_axis_accepts_letters_and_ints(self, small_volume, stub_pair, cache_path):
        with build(small_volume, stub_pair.encoder, cache_path) as cache:
            a = cache.get("z", 1)
            b = cache.get(Axis.Z, 1)
            c = cache.get(2, 1)
            assert np.array_equal(a, b) and np.array_equal(b, c)


class TestDeterminism:
    def test_parallel_matches_serial(self, small_volume, stub_pair, tmp_path):
        p1 = tmp_path / "serial.vsemb"
        p4 = tmp_path / "parallel.vsemb"
        build(small_volume, stub_pair.encoder, p1, workers=1)
        build(small_volume, stub_pair.encoder, p4, workers=4)
        b1, b4 = p1.read_bytes(), p4.read_bytes()
        # entry regions byte-identical; headers may differ in timestamp only
        assert b1[header_end(b1):] == b4[header_end(b4):]
        h1 = json.loads(b1[12:header_end(b1)])
        h4 = json.loads(b4[12:header_end(b4)])
        h1.pop("created"), h4.pop("created")
        assert h1 == h4

    def test_repeat_run_same_payload(self, small_volume, stub_pair, tmp_path):
        p1 = tmp_path / "a.vsemb"
        p2 = tmp_path / "b.vsemb"
        build(small_volume, stub_pair.encoder, p1)
        build(small_volume, stub_pair.encoder, p2)
        b1, b2 = p1.read_bytes(), p2.read_bytes()
        assert b1[header_end(b1):] == b2[header_end(b2):]


class TestJobControl:
    def test_progress_counters(self, small_volume, stub_pair, cache_path):
        job = ec.PrecomputeJob()
        build(small_volume, stub_pair.encoder, cache_path, job=job)
        assert job.total == sum(small_volume.dims)
        assert job.done == job.total
        assert not job.cancelled

    def test_cancel_leaves_incomplete_file(self, small_volume, stub_pair, cache_path):
        job = ec.PrecomputeJob()
        job.cancel()
        with pytest.raises(Cancelled):
            build(small_volume, stub_pair.encoder, cache_path, job=job)
        assert cache_path.exists()
        with pytest.raises(IncompleteCache):
            ec.open_cache(cache_path)
        report = ec.verify_cache(cache_path)
        assert not report.ok
        assert any(p.code == "IncompleteCache" for p in report.problems)

    def test_mid_run_cancel(self, small_volume, stub_pair, cache_path):
        job = ec.PrecomputeJob()
        calls = []

        class TrippingEncoder:
            input_side = stub_pair.encoder.input_side
            embedding_shape = stub_pair.encoder.embedding_shape
            model_hash = stub_pair.encoder.model_hash
            mean, std = stub_pair.encoder.mean, stub_pair.encoder.std

            def run(self, x):
                calls.append(1)
                if len(calls) == 3:
                    job.cancel()
                return stub_pair.encoder.run(x)

        with pytest.raises(Cancelled):
            ec.precompute(small_volume, "xyz", TrippingEncoder(), cache_path, job=job)
        assert job.done < job.total

    def test_encoder_failure_abandons_file(self, small_volume, stub_pair, cache_path):
        class FailingEncoder:
            input_side = stub_pair.encoder.input_side
            embedding_shape = stub_pair.encoder.embedding_shape
            model_hash = "x"
            mean, std = (0.0, 0.0, 0.0), (255.0, 255.0, 255.0)

            def run(self, x):
                raise RuntimeError("boom")

        with pytest.raises(RuntimeError):
            ec.precompute(small_volume, "z", FailingEncoder(), cache_path)
        with pytest.raises(IncompleteCache):
            ec.open_cache(cache_path)


class TestValidation:
    def test_rejects_empty_axes(self, small_volume, stub_pair, cache_path):
        with pytest.raises(ValueError):
            ec.precompute(small_volume, "", stub_pair.encoder, cache_path)

    def test_rejects_unknown_scalar_type(self, small_volume, stub_pair, cache_path):
        with pytest.raises(ValueError):
            build(small_volume, stub_pair.encoder, cache_path, scalar_type="float64")

    def test_axes_deduplicated(self, small_volume, stub_pair, cache_path):
        with build(small_volume, stub_pair.encoder, cache_path, axes="zzz") as cache:
            assert cache.axes == [Axis.Z]


class TestDamageDetection:
    @pytest.fixture()
    def good_file(self, small_volume, stub_pair, cache_path):
        build(small_volume, stub_pair.encoder, cache_path).close()
        return cache_path

    def test_bad_magic(self, good_file):
        blob = bytearray(good_file.read_bytes())
        blob[:4] = b"NOPE"
        good_file.write_bytes(blob)
        with pytest.raises(CorruptPayload):
            ec.open_cache(good_file)
        report = ec.verify_cache(good_file)
        assert not report.ok and report.problems[0].code == "CorruptPayload"

    def test_future_version(self, good_file):
        blob = bytearray(good_file.read_bytes())
        struct.pack_into("<I", blob, 4, ec.VERSION + 1)
        good_file.write_bytes(blob)
        with pytest.raises(VersionMismatch):
            ec.open_cache(good_file)
        assert any(p.code == "VersionMismatch"
                   for p in ec.verify_cache(good_file).problems)

    def test_truncated_file(self, good_file):
        blob = good_file.read_bytes()
        good_file.write_bytes(blob[:-10])
        with pytest.raises(IncompleteCache):
            ec.open_cache(good_file)
        assert any(p.code == "IncompleteCache"
                   for p in ec.verify_cache(good_file).problems)

    def test_flipped_payload_byte(self, good_file):
        blob = bytearray(good_file.read_bytes())
        mid = header_end(bytes(blob)) + 200  # inside the first payload
        blob[mid] ^= 0xFF
        good_file.write_bytes(blob)
        with ec.open_cache(good_file) as cache:
            hits = 0
            for axis, index in cache.entries():
                try:
                    cache.get(axis, index)
                except CorruptPayload:
                    hits += 1
            assert hits == 1
        report = ec.verify_cache(good_file)
        assert not report.ok
        assert any(p.code == "CorruptPayload" for p in report.problems)

    def test_empty_file(self, tmp_path):
        path = tmp_path / "empty.vsemb"
        path.write_bytes(b"")
        with pytest.raises(IncompleteCache):
            ec.open_cache(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(IncompleteCache):
            ec.open_cache(tmp_path / "never.vsemb")
        report = ec.verify_cache(tmp_path / "never.vsemb")
        assert not report.ok


class TestVerifyReport:
    def test_clean_report(self, small_volume, stub_pair, cache_path):
        build(small_volume, stub_pair.encoder, cache_path).close()
        report = ec.verify_cache(cache_path)
        assert report.ok and report.problems == []
        nx, ny, nz = small_volume.dims
        assert report.entry_counts == {"x": nx, "y": ny, "z": nz}
        doc = report.as_dict()
        assert doc["ok"] is True and doc["path"] == str(cache_path)

    def test_missing_slice_reported(self, small_volume, stub_pair, cache_path):
        """A complete file whose z-axis has fewer entries than the volume extent."""
        from voxelsam.model_runtime import encode as run_encode
        enc = stub_pair.encoder
        header = ec._build_header(small_volume.dims, [Axis.Z], enc.embedding_shape,
                                  "float16", enc.model_hash,
                                  {"method": "none", "params": {}}, enc.input_side)
        nz = small_volume.dims[2]
        header["entry_count"] = nz - 1
        writer = ec._CacheWriter(cache_path, header)
        for i in range(nz - 1):
            img = enhance_contrast(extract_slice(small_volume, Axis.Z, i), "none")
            writer.write_entry(Axis.Z, i, run_encode(enc, img), "float16")
        writer.finalize()
        report = ec.verify_cache(cache_path)
        assert not report.ok
        missing = [p for p in report.problems if p.code == "MissingEntry"]
        assert missing and missing[0].axis == "z"
        with ec.open_cache(cache_path) as cache:  # opens; the gap surfaces on get
            with pytest.raises(MissingEntry):
                cache.get(Axis.Z, nz - 1)
