"""Command-line front door: embed, serve, verify, info, interpolate, export.

Configuration precedence is flags > environment (VOXELSAM_MODEL_DIR,
VOXELSAM_WORKERS) > JSON defaults file; `--verbose` prints the effective
config and where each value came from. Exit codes: 0 ok, 2 usage,
3 missing model, 4 corrupt/invalid input, 5 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import socket
import sys
import threading
import time
from dataclasses import dataclass
from pathlib import Path

from .embedding_cache import PrecomputeJob, open_cache, precompute, verify_cache
from .errors import NoEncoder, VoxelSamError
from .labelmap_store import export_labelmap, import_labelmap, infer_keyframes
from .model_runtime import (MODEL_DIR_ENV, find_encoder, load_graph,
                            resolve_model_dir, stub_model_dir)
from .slice_interpolation import fill_between
from .volume_io import load_volume

WORKERS_ENV = "VOXELSAM_WORKERS"
CONFIG_ENV = "VOXELSAM_CONFIG"
DEFAULT_CONFIG_PATH = Path.home() / ".config" / "voxelsam" / "config.json"

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_NO_MODEL = 3
EXIT_BAD_INPUT = 4
EXIT_RUNTIME = 5

_EXIT_BY_CODE = {
    "NoEncoder": EXIT_NO_MODEL,
    "GraphLoadError": EXIT_NO_MODEL,
    "UnreadableFile": EXIT_BAD_INPUT,
    "UnsupportedFormat": EXIT_BAD_INPUT,
    "DimensionMismatch": EXIT_BAD_INPUT,
    "CorruptPayload": EXIT_BAD_INPUT,
    "IncompleteCache": EXIT_BAD_INPUT,
    "VersionMismatch": EXIT_BAD_INPUT,
    "MissingEntry": EXIT_BAD_INPUT,
    "TooFewKeyframes": EXIT_BAD_INPUT,
    "EmptyKeyframe": EXIT_BAD_INPUT,
    "UnknownSegment": EXIT_BAD_INPUT,
    "InvalidParams": EXIT_USAGE,
}

log = logging.getLogger("voxelsam")


@dataclass
class CliConfig:
    """Effective global options with their provenance for --verbose."""

    model_dir: Path | None
    workers: int | None
    port: int
    log_level: str
    sources: dict[str, str]

    @classmethod
    def resolve(cls, args: argparse.Namespace) -> "CliConfig":
        values = {"model_dir": None, "workers": None, "port": 8642,
                  "log_level": "warning"}
        sources = {k: "default" for k in values}

        config_path = getattr(args, "config", None) or os.environ.get(CONFIG_ENV)
        path = Path(config_path) if config_path else DEFAULT_CONFIG_PATH
        if path.is_file():
            try:
                doc = json.loads(path.read_text())
            except (OSError, json.JSONDecodeError) as exc:
                raise VoxelSamError(f"cannot read defaults file {path}: {exc}")
            for key in values:
                if key in doc:
                    values[key] = doc[key]
                    sources[key] = f"file:{path}"

        env_map = {"model_dir": MODEL_DIR_ENV, "workers": WORKERS_ENV}
        for key, env in env_map.items():
            if os.environ.get(env):
                values[key] = os.environ[env]
                sources[key] = f"env:{env}"

        for key in values:
            flag = getattr(args, key, None)
            if flag is not None:
                values[key] = flag
                sources[key] = "flag"

        return cls(
            model_dir=Path(values["model_dir"]) if values["model_dir"] else None,
            workers=int(values["workers"]) if values["workers"] is not None else None,
            port=int(values["port"]),
            log_level=str(values["log_level"]),
            sources=sources)

    def as_dict(self) -> dict:
        return {"model_dir": str(self.model_dir) if self.model_dir else None,
                "workers": self.workers, "port": self.port,
                "log_level": self.log_level, "sources": self.sources}


def _model_directory(config: CliConfig) -> Path:
    return config.model_dir if config.model_dir is not None else stub_model_dir()


def _load_encoder(config: CliConfig):
    directory = _model_directory(config)
    path = find_encoder(directory)
    if path is None:
        raise NoEncoder(f"no encoder graph found in {directory}",
                        model_dir=str(directory))
    return load_graph(path, "encoder")


def _print(doc: dict) -> None:
    print(json.dumps(doc, indent=2, sort_keys=True))


# -- commands ---------------------------------------------------------------


def cmd_embed(args: argparse.Namespace, config: CliConfig) -> int:
    volume = load_volume(args.input)
    encoder = _load_encoder(config)
    out = Path(args.out) if args.out else Path(args.input).with_suffix(".vsemb")
    job = PrecomputeJob()

    progress = {"stop": False}

    def report():
        while not progress["stop"]:
            if job.total:
                print(f"\r{job.done}/{job.total}", end="", file=sys.stderr, flush=True)
            time.sleep(0.1)

    reporter = threading.Thread(target=report, daemon=True)
    if sys.stderr.isatty():
        reporter.start()
    try:
        cache = precompute(volume, args.axes, encoder, out, enhance=args.enhance,
                           scalar_type=args.scalar_type, workers=config.workers,
                           job=job)
    finally:
        progress["stop"] = True
        if reporter.is_alive():
            reporter.join()
            print(file=sys.stderr)
    cache.close()
    print(f"{job.done}/{job.total} slices -> {out}")
    return EXIT_OK


def cmd_serve(args: argparse.Namespace, config: CliConfig) -> int:
    import uvicorn

    from .service_api import create_app

    app = create_app(config.model_dir, workers=config.workers)
    sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
    try:
        sock.bind((args.host, config.port))
    except OSError as exc:
        sock.close()
        print(f"error: PortInUse: cannot bind {args.host}:{config.port}: {exc}",
              file=sys.stderr)
        return EXIT_RUNTIME
    host, port = sock.getsockname()
    print(f"serving on http://{host}:{port}", flush=True)
    server = uvicorn.Server(uvicorn.Config(
        app, log_level=config.log_level.lower(), access_log=False))
    server.run(sockets=[sock])
    return EXIT_OK


def cmd_verify(args: argparse.Namespace, config: CliConfig) -> int:
    report = verify_cache(args.path)
    _print(report.as_dict())
    return EXIT_OK if report.ok else EXIT_BAD_INPUT


def cmd_info(args: argparse.Namespace, config: CliConfig) -> int:
    path = Path(args.path)
    if path.suffix == ".vsemb":
        cache = open_cache(path)
        try:
            counts: dict[str, int] = {}
            for axis, _ in cache.entries():
                counts[axis.letter] = counts.get(axis.letter, 0) + 1
            _print({"kind": "embedding-cache", "path": str(path),
                    "dims": list(cache.dims), "axes": [a.letter for a in cache.axes],
                    "embedding_shape": list(cache.embedding_shape),
                    "scalar_type": cache.scalar_type,
                    "model_hash": cache.model_hash,
                    "preprocessing": cache.preprocessing,
                    "entry_counts": counts})
        finally:
            cache.close()
        return EXIT_OK
    volume = load_volume(path)
    _print({"kind": "volume", "path": str(path), "dims": list(volume.dims),
            "spacing": list(volume.spacing), "dtype": str(volume.data.dtype),
            "intensity_range": [float(volume.intensity_min),
                                float(volume.intensity_max)]})
    return EXIT_OK


def cmd_interpolate(args: argparse.Namespace, config: CliConfig) -> int:
    lm = import_labelmap(args.labels)
    keyframes = infer_keyframes(lm, args.segment, args.axis)
    log.info("inferred %d keyframes on axis %s: %s", len(keyframes), args.axis,
             keyframes)
    written = fill_between(lm, args.segment, args.axis, args.mode)
    out = Path(args.out) if args.out else Path(args.labels)
    export_labelmap(lm, out)
    _print({"written": written, "keyframes": keyframes, "out": str(out)})
    return EXIT_OK


def cmd_export(args: argparse.Namespace, config: CliConfig) -> int:
    lm = import_labelmap(args.labels)
    export_labelmap(lm, args.out, fmt=args.format)
    _print({"out": str(args.out)})
    return EXIT_OK


# -- parser -----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="voxelsam",
        description="Interactive 3D tomogram segmentation: precompute "
                    "slice embeddings, serve the annotation API, and "
                    "complete segments between keyframes.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--model-dir", dest="model_dir", metavar="DIR",
                        help="directory holding encoder/decoder graphs "
                             "(default: built-in stub graphs)")
    common.add_argument("--workers", type=int, metavar="N",
                        help="encoder worker threads (default: cpu count)")
    common.add_argument("--config", metavar="FILE",
                        help="JSON defaults file (lowest precedence)")
    common.add_argument("--log-level", dest="log_level", metavar="LEVEL",
                        help="logging level (default: warning)")
    common.add_argument("--verbose", action="store_true",
                        help="print the effective configuration to stderr")

    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("embed", parents=[common],
                       help="precompute per-slice embeddings into a .vsemb cache")
    p.add_argument("--in", dest="input", required=True, metavar="VOLUME",
                   help="input volume (tiff, nrrd, or raw+json)")
    p.add_argument("--out", metavar="CACHE",
                   help="output cache path (default: volume with .vsemb suffix)")
    p.add_argument("--axes", default="xyz", help="axes to cache (default: xyz)")
    p.add_argument("--enhance", default="clahe",
                   choices=["none", "global-equalize", "clahe"],
                   help="contrast enhancement applied before encoding")
    p.add_argument("--scalar-type", dest="scalar_type", default="float16",
                   choices=["float16", "float32"],
                   help="on-disk embedding precision")
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("serve", parents=[common],
                       help="run the HTTP/JSON segmentation service")
    p.add_argument("--host", default="127.0.0.1", help="bind address")
    p.add_argument("--port", type=int, metavar="PORT",
                   help="TCP port (default 8642; 0 picks a free port)")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("verify", parents=[common],
                       help="validate a .vsemb cache and print a report")
    p.add_argument("path", metavar="CACHE")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("info", parents=[common],
                       help="print metadata of a volume or cache as JSON")
    p.add_argument("path", metavar="FILE")
    p.set_defaults(func=cmd_info)

    p = sub.add_parser("interpolate", parents=[common],
                       help="fill a segment between its keyframe slices")
    p.add_argument("--labels", required=True, metavar="FILE",
                   help="label map file (keyframes inferred from occupancy)")
    p.add_argument("--segment", type=int, required=True)
    p.add_argument("--axis", required=True, choices=["x", "y", "z"])
    p.add_argument("--mode", default="overwrite", choices=["overwrite", "preserve"])
    p.add_argument("--out", metavar="FILE",
                   help="output path (default: rewrite --labels in place)")
    p.set_defaults(func=cmd_interpolate)

    p = sub.add_parser("export", parents=[common],
                       help="convert a label map between formats")
    p.add_argument("--labels", required=True, metavar="FILE")
    p.add_argument("--out", required=True, metavar="FILE")
    p.add_argument("--format", choices=["tiff", "nrrd", "raw"],
                   help="output format (default: sniffed from --out)")
    p.set_defaults(func=cmd_export)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = CliConfig.resolve(args)
    except VoxelSamError as exc:
        print(f"error: {exc.code}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=config.log_level.upper())
    if args.verbose:
        print(json.dumps(config.as_dict(), indent=2), file=sys.stderr)
    try:
        return args.func(args, config)
    except VoxelSamError as exc:
        print(f"error: {exc.code}: {exc}", file=sys.stderr)
        return _EXIT_BY_CODE.get(exc.code, EXIT_RUNTIME)
    except OSError as exc:
        print(f"error: OSError: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
