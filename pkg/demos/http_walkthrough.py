#!/usr/bin/env python3
"""Drive a live voxelsam service through one full annotation session.

Starts ``voxelsam serve`` on a free port, then talks plain HTTP/JSON with
nothing but the standard library: session, embed job with SSE progress,
point prompts, mask decode, accepts, interpolation, undo, and export.
Run it from the repository root:

    python demos/http_walkthrough.py
"""

import json
import signal
import subprocess
import sys
import tempfile
import time
import urllib.error
import urllib.request
from pathlib import Path

import numpy as np

from voxelsam.volume_io import Volume3D, save_volume


def call(base: str, method: str, path: str, body: dict | None = None) -> dict:
    data = json.dumps(body).encode() if body is not None else None
    req = urllib.request.Request(base + path, data=data, method=method,
                                 headers={"content-type": "application/json"})
    with urllib.request.urlopen(req) as resp:
        return json.loads(resp.read())


def stream_job_events(base: str, jid: str) -> dict:
    """Follow the job's SSE stream; return the terminal snapshot."""
    with urllib.request.urlopen(base + f"/jobs/{jid}/events") as resp:
        for raw in resp:
            line = raw.decode().strip()
            if not line.startswith("data: "):
                continue
            snap = json.loads(line[len("data: "):])
            print(f"  embed progress: {snap['done']}/{snap['total']} "
                  f"({snap['phase']})")
            if snap["terminal"]:
                return snap
    raise RuntimeError("event stream ended without a terminal snapshot")


def main() -> None:
    workdir = Path(tempfile.mkdtemp(prefix="voxelsam-http-demo-"))
    rng = np.random.default_rng(5)
    volume_path = workdir / "scan.nrrd"
    save_volume(volume_path, Volume3D.from_array(
        rng.integers(0, 255, size=(24, 48, 48), dtype=np.uint8)))

    server = subprocess.Popen(
        [sys.executable, "-m", "voxelsam", "serve", "--host", "127.0.0.1",
         "--port", "0"],
        stdout=subprocess.PIPE, stderr=subprocess.STDOUT, text=True)
    try:
        line = server.stdout.readline().strip()
        assert line.startswith("serving on "), line
        base = line.removeprefix("serving on ")
        deadline = time.monotonic() + 15.0
        while True:  # the accept loop comes up a beat after the announcement
            try:
                call(base, "GET", "/healthz")
                break
            except urllib.error.URLError:
                if time.monotonic() > deadline:
                    raise
                time.sleep(0.05)
        print(f"server up at {base}")

        sid = call(base, "POST", "/sessions",
                   {"volume_path": str(volume_path)})["session_id"]
        print(f"session {sid} over {volume_path.name}")

        jid = call(base, "POST", f"/sessions/{sid}/embed",
                   {"axes": "z"})["job_id"]
        snap = stream_job_events(base, jid)
        assert snap["phase"] == "complete", snap

        seg = call(base, "POST", f"/sessions/{sid}/segments",
                   {"name": "inclusion"})["id"]
        for z in (5, 15):
            call(base, "POST", f"/sessions/{sid}/points",
                 {"segment": seg, "axis": "z", "kind": "include",
                  "voxel": [20, 30, z]})
            mask = call(base, "GET",
                        f"/sessions/{sid}/mask?segment={seg}&axis=z&index={z}")
            runs = mask["mask"]["counts"]
            print(f"slice z={z}: mask score {mask['score']:.2f}, "
                  f"{sum(runs[1::2])} px foreground")
            accepted = call(base, "POST", f"/sessions/{sid}/accept",
                            {"segment": seg, "axis": "z", "index": z})
            print(f"  accepted -> generation {accepted['generation']}")

        filled = call(base, "POST", f"/sessions/{sid}/interpolate",
                      {"segment": seg, "axis": "z"})
        frames = [k["index"] for k in filled["keyframes"]]
        print(f"interpolated {filled['written']} slices; keyframes {frames}")

        undo = call(base, "POST", f"/sessions/{sid}/undo")
        print(f"undo -> generation {undo['generation']}; re-interpolating")
        call(base, "POST", f"/sessions/{sid}/interpolate",
             {"segment": seg, "axis": "z"})

        export_path = workdir / "labels.nrrd"
        with urllib.request.urlopen(
                base + f"/sessions/{sid}/export?format=nrrd") as resp:
            export_path.write_bytes(resp.read())
        print(f"exported label map -> {export_path} "
              f"({export_path.stat().st_size} bytes)")
    finally:
        server.send_signal(signal.SIGTERM)
        server.wait(timeout=10)
    print("server stopped")


if __name__ == "__main__":
    main()
