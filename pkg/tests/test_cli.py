import json
import os
import signal
import socket
import subprocess
import sys
import time
import urllib.request

import numpy as np
import pytest

from voxelsam import cli
from voxelsam.labelmap_store import LabelMap, export_labelmap
from voxelsam.volume_io import Axis, Volume3D, save_volume

DIMS = (12, 14, 16)  # nx, ny, nz


@pytest.fixture(autouse=True)
def clean_env(monkeypatch, tmp_path):
    monkeypatch.delenv("VOXELSAM_MODEL_DIR", raising=False)
    monkeypatch.delenv("VOXELSAM_WORKERS", raising=False)
    monkeypatch.delenv("VOXELSAM_CONFIG", raising=False)
    monkeypatch.setattr(cli, "DEFAULT_CONFIG_PATH", tmp_path / "no-config.json")


@pytest.fixture()
def volume_file(tmp_path, rng):
    nx, ny, nz = DIMS
    vol = Volume3D.from_array(
        rng.integers(0, 900, size=(nz, ny, nx)).astype(np.uint16),
        spacing=(1.0, 1.0, 2.0))
    path = tmp_path / "scan.nrrd"
    save_volume(path, vol)
    return path


@pytest.fixture()
def labels_file(tmp_path):
    lm = LabelMap(DIMS)
    seg = lm.create_segment("pore").id
    disk = np.zeros((DIMS[1], DIMS[0]), dtype=bool)
    disk[4:9, 3:8] = True
    lm.write_mask(seg, Axis.Z, 2, disk)
    lm.write_mask(seg, Axis.Z, 6, disk)
    path = tmp_path / "labels.nrrd"
    export_labelmap(lm, path)
    return path, seg


def run(argv, capsys):
    code = cli.main(argv)
    captured = capsys.readouterr()
    return code, captured.out, captured.err


class TestEmbedCommand:
    def test_embed_then_verify_and_info(self, volume_file, capsys):
        code, out, _ = run(["embed", "--in", str(volume_file)], capsys)
        assert code == 0
        cache = volume_file.with_suffix(".vsemb")
        total = sum(DIMS)
        assert out.strip() == f"{total}/{total} slices -> {cache}"

        code, out, _ = run(["verify", str(cache)], capsys)
        assert code == 0
        report = json.loads(out)
        assert report["ok"] is True
        assert report["entry_counts"] == {"x": DIMS[0], "y": DIMS[1], "z": DIMS[2]}

        code, out, _ = run(["info", str(cache)], capsys)
        assert code == 0
        doc = json.loads(out)
        assert doc["kind"] == "embedding-cache"
        assert doc["dims"] == list(DIMS)
        assert doc["scalar_type"] == "float16"

    def test_explicit_out_and_axes(self, volume_file, tmp_path, capsys):
        out_path = tmp_path / "only-z.vsemb"
        code, out, _ = run(["embed", "--in", str(volume_file),
                            "--out", str(out_path), "--axes", "z",
                            "--scalar-type", "float32"], capsys)
        assert code == 0
        assert str(out_path) in out
        code, out, _ = run(["info", str(out_path)], capsys)
        doc = json.loads(out)
        assert doc["axes"] == ["z"] and doc["scalar_type"] == "float32"

    def test_missing_volume_exit_4(self, tmp_path, capsys):
        code, _, err = run(["embed", "--in", str(tmp_path / "none.nrrd")], capsys)
        assert code == 4
        assert err.startswith("error: UnreadableFile:")

    def test_empty_model_dir_exit_3(self, volume_file, tmp_path, capsys):
        empty = tmp_path / "models"
        empty.mkdir()
        code, _, err = run(["embed", "--in", str(volume_file),
                            "--model-dir", str(empty)], capsys)
        assert code == 3
        assert err.startswith("error: NoEncoder:")

    def test_bad_axes_exit_2(self, volume_file, capsys):
        code, _, err = run(["embed", "--in", str(volume_file), "--axes", "q"],
                           capsys)
        assert code == 2
        assert "error: InvalidParams:" in err


class TestVerifyCommand:
    def test_corrupt_cache_exit_4(self, volume_file, capsys):
        run(["embed", "--in", str(volume_file)], capsys)
        cache = volume_file.with_suffix(".vsemb")
        blob = bytearray(cache.read_bytes())
        blob[-5] ^= 0xFF
        cache.write_bytes(blob)
        code, out, _ = run(["verify", str(cache)], capsys)
        assert code == 4
        report = json.loads(out)
        assert report["ok"] is False and report["problems"]

    def test_missing_cache_exit_4(self, tmp_path, capsys):
        code, out, _ = run(["verify", str(tmp_path / "no.vsemb")], capsys)
        assert code == 4
        assert json.loads(out)["ok"] is False


class TestInfoCommand:
    def test_volume_info(self, volume_file, capsys):
        code, out, _ = run(["info", str(volume_file)], capsys)
        assert code == 0
        doc = json.loads(out)
        assert doc["kind"] == "volume"
        assert doc["dims"] == list(DIMS)
        assert doc["spacing"] == [1.0, 1.0, 2.0]
        assert doc["dtype"] == "uint16"

    def test_unreadable_exit_4(self, tmp_path, capsys):
        code, _, err = run(["info", str(tmp_path / "ghost.nrrd")], capsys)
        assert code == 4
        assert "UnreadableFile" in err


class TestInterpolateCommand:
    def test_fills_gap_in_place(self, labels_file, capsys):
        path, seg = labels_file
        code, out, _ = run(["interpolate", "--labels", str(path),
                            "--segment", str(seg), "--axis", "z"], capsys)
        assert code == 0
        doc = json.loads(out)
        assert doc["written"] == 3
        assert doc["keyframes"] == [2, 6]
        assert doc["out"] == str(path)
        from voxelsam.labelmap_store import import_labelmap
        lm = import_labelmap(path)
        for z in (3, 4, 5):
            assert (lm.label_slice(Axis.Z, z) == seg).any()
        assert not (lm.label_slice(Axis.Z, 7) == seg).any()

    def test_separate_out_keeps_input(self, labels_file, tmp_path, capsys):
        path, seg = labels_file
        before = path.read_bytes()
        out_path = tmp_path / "filled.nrrd"
        code, out, _ = run(["interpolate", "--labels", str(path),
                            "--segment", str(seg), "--axis", "z",
                            "--out", str(out_path)], capsys)
        assert code == 0
        assert path.read_bytes() == before
        assert out_path.exists()

    def test_rerun_finds_no_gaps(self, labels_file, capsys):
        path, seg = labels_file
        run(["interpolate", "--labels", str(path), "--segment", str(seg),
             "--axis", "z"], capsys)
        code, out, _ = run(["interpolate", "--labels", str(path),
                            "--segment", str(seg), "--axis", "z"], capsys)
        assert code == 0
        doc = json.loads(out)
        assert doc["written"] == 0  # filled slices are keyframes now; no gaps
        assert doc["keyframes"] == [2, 3, 4, 5, 6]

    def test_single_keyframe_exit_4(self, tmp_path, capsys):
        lm = LabelMap(DIMS)
        seg = lm.create_segment("s").id
        mask = np.zeros((DIMS[1], DIMS[0]), dtype=bool)
        mask[2, 2] = True
        lm.write_mask(seg, Axis.Z, 3, mask)
        path = tmp_path / "one.nrrd"
        export_labelmap(lm, path)
        code, _, err = run(["interpolate", "--labels", str(path),
                            "--segment", str(seg), "--axis", "z"], capsys)
        assert code == 4
        assert "TooFewKeyframes" in err

    def test_unknown_segment_exit_4(self, labels_file, capsys):
        path, _ = labels_file
        code, _, err = run(["interpolate", "--labels", str(path),
                            "--segment", "42", "--axis", "z"], capsys)
        assert code == 4
        assert "UnknownSegment" in err


class TestExportCommand:
    def test_format_conversion_round_trip(self, labels_file, tmp_path, capsys):
        path, seg = labels_file
        out_path = tmp_path / "labels.tiff"
        code, out, _ = run(["export", "--labels", str(path),
                            "--out", str(out_path)], capsys)
        assert code == 0
        assert json.loads(out) == {"out": str(out_path)}
        from voxelsam.labelmap_store import import_labelmap
        a, b = import_labelmap(path), import_labelmap(out_path)
        assert np.array_equal(a.data, b.data)
        assert b.segment(seg).name == "pore"

    def test_bad_input_exit_4(self, tmp_path, capsys):
        code, _, err = run(["export", "--labels", str(tmp_path / "no.nrrd"),
                            "--out", str(tmp_path / "o.nrrd")], capsys)
        assert code == 4


class TestUsage:
    def test_no_command(self, capsys):
        with pytest.raises(SystemExit) as exc:
            cli.main([])
        assert exc.value.code == 2

    def test_unknown_command(self, capsys):
        with pytest.raises(SystemExit) as exc:
            cli.main(["frobnicate"])
        assert exc.value.code == 2

    def test_help_exits_zero(self, capsys):
        with pytest.raises(SystemExit) as exc:
            cli.main(["--help"])
        assert exc.value.code == 0


class TestConfigPrecedence:
    def parse(self, argv):
        return cli.build_parser().parse_args(argv)

    def test_defaults(self, volume_file):
        config = cli.CliConfig.resolve(self.parse(["info", str(volume_file)]))
        assert config.workers is None and config.port == 8642
        assert config.sources["workers"] == "default"

    def test_file_then_env_then_flag(self, tmp_path, volume_file, monkeypatch):
        defaults = tmp_path / "conf.json"
        defaults.write_text(json.dumps({"workers": 7, "port": 9000}))

        base = ["info", str(volume_file), "--config", str(defaults)]
        config = cli.CliConfig.resolve(self.parse(base))
        assert config.workers == 7 and config.port == 9000
        assert config.sources["workers"].startswith("file:")

        monkeypatch.setenv("VOXELSAM_WORKERS", "3")
        config = cli.CliConfig.resolve(self.parse(base))
        assert config.workers == 3
        assert config.sources["workers"] == "env:VOXELSAM_WORKERS"
        assert config.port == 9000  # env does not cover port

        config = cli.CliConfig.resolve(self.parse(base + ["--workers", "2"]))
        assert config.workers == 2
        assert config.sources["workers"] == "flag"

    def test_config_env_var_points_to_file(self, tmp_path, volume_file,
                                           monkeypatch):
        defaults = tmp_path / "conf.json"
        defaults.write_text(json.dumps({"log_level": "debug"}))
        monkeypatch.setenv("VOXELSAM_CONFIG", str(defaults))
        config = cli.CliConfig.resolve(self.parse(["info", str(volume_file)]))
        assert config.log_level == "debug"

    def test_broken_config_file_exit_2(self, tmp_path, volume_file, capsys):
        defaults = tmp_path / "conf.json"
        defaults.write_text("{not json")
        code, _, err = run(["info", str(volume_file),
                            "--config", str(defaults)], capsys)
        assert code == 2
        assert "cannot read defaults file" in err

    def test_verbose_prints_sources(self, volume_file, capsys):
        code, _, err = run(["info", str(volume_file), "--verbose"], capsys)
        assert code == 0
        doc = json.loads(err)
        assert doc["sources"]["model_dir"] == "default"


class TestServeCommand:
    def spawn(self, *argv):
        return subprocess.Popen(
            [sys.executable, "-m", "voxelsam", "serve", *argv],
            stdout=subprocess.PIPE, stderr=subprocess.PIPE, text=True,
            env={**os.environ, "PYTHONUNBUFFERED": "1"})

    def test_port_zero_picks_free_port(self):
        proc = self.spawn("--port", "0")
        try:
            line = proc.stdout.readline().strip()
            assert line.startswith("serving on http://127.0.0.1:")
            url = line.removeprefix("serving on ")
            deadline = time.time() + 10
            doc = None
            while time.time() < deadline:
                try:
                    with urllib.request.urlopen(f"{url}/healthz", timeout=1) as r:
                        doc = json.loads(r.read())
                    break
                except OSError:
                    time.sleep(0.05)
            assert doc and doc["ok"] is True
        finally:
            proc.send_signal(signal.SIGTERM)
            proc.wait(timeout=10)

    def test_port_in_use_exit_5(self):
        blocker = socket.socket()
        blocker.bind(("127.0.0.1", 0))
        blocker.listen(1)
        port = blocker.getsockname()[1]
        try:
            proc = self.spawn("--port", str(port))
            _, err = proc.communicate(timeout=15)
            assert proc.returncode == 5
            assert "error: PortInUse:" in err
        finally:
            blocker.close()
