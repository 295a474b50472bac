"""Local HTTP/JSON service exposing the full segmentation workflow.

The heavy core (encoder precompute, decoding, label map) runs in this
process; clients — the browser UI or scripts — drive it through small
JSON endpoints. Masks travel as run-length encoding so any client can
parse them without an image library; long-running precompute jobs report
progress over server-sent events.

Every error response has the shape {"code", "message", "details"} with
stable code strings (the exception class names from voxelsam.errors).
"""

from __future__ import annotations

import asyncio
import json
import tempfile
import threading
import time
import uuid
from dataclasses import dataclass, field
from pathlib import Path

import cv2
import numpy as np
from fastapi import FastAPI
from fastapi.exceptions import RequestValidationError
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import FileResponse, JSONResponse, Response, StreamingResponse
from pydantic import BaseModel
from starlette.exceptions import HTTPException as StarletteHTTPException

from . import rle
from .embedding_cache import EmbeddingCache, PrecomputeJob, open_cache, precompute
from .errors import (Cancelled, DimensionMismatch, EmbedRunning, InvalidParams,
                     MissingEntry, NoEncoder, UnknownJob, UnknownSession,
                     VoxelSamError)
from .labelmap_store import LabelMap, export_labelmap
from .model_runtime import (DecoderGraph, EncoderGraph, find_decoder,
                            find_encoder, load_graph, resolve_model_dir,
                            stub_model_dir)
from .prompt_engine import (PromptPoint, SegmentationSession, accept_mask,
                            decode_prompt, to_slice_coords,
                            voxel_from_slice_coords)
from .slice_interpolation import fill_between
from .volume_io import Axis, Volume3D, extract_slice, load_volume, rescale_to_uint8

DEFAULT_PORT = 8642
DEFAULT_SESSION_TTL = 4 * 3600.0

_STATUS = {
    "UnreadableFile": 404, "UnknownSession": 404, "UnknownSegment": 404,
    "UnknownPoint": 404, "UnknownJob": 404,
    "DimensionMismatch": 409, "EmbedRunning": 409, "NothingToUndo": 409,
    "NoDecodedMask": 409, "MissingEntry": 409,
    "IncompleteCache": 422, "CorruptPayload": 422, "VersionMismatch": 422,
    "UnsupportedFormat": 422, "InvalidParams": 422, "EmptyPrompt": 422,
    "ShapeMismatch": 422, "TooFewKeyframes": 422, "EmptyKeyframe": 422,
    "AxisMismatch": 422, "IndexOutOfRange": 422, "ScaleMissing": 422,
    "NoEncoder": 503, "GraphLoadError": 503,
}

_EXPORT_FORMATS = {
    "nrrd": (".nrrd", "application/octet-stream"),
    "tiff": (".tiff", "image/tiff"),
    "raw": (".raw", "application/octet-stream"),
}


def _error_body(exc: VoxelSamError) -> dict:
    return {"code": exc.code, "message": str(exc), "details": exc.details}


def _error_response(exc: VoxelSamError, status: int | None = None) -> JSONResponse:
    return JSONResponse(status_code=status or _STATUS.get(exc.code, 500),
                        content=_error_body(exc))


@dataclass
class SessionState:
    id: str
    volume: Volume3D
    volume_path: Path
    label_map: LabelMap
    engine: SegmentationSession
    cache: EmbeddingCache | None = None
    cache_path: Path | None = None
    created: float = field(default_factory=time.time)
    last_active: float = field(default_factory=time.time)
    embed_job_id: str | None = None
    lock: threading.RLock = field(default_factory=threading.RLock)

    def require_cache(self) -> EmbeddingCache:
        if self.cache is None:
            raise MissingEntry(
                "session has no embedding cache; run POST /sessions/{id}/embed first",
                session=self.id)
        return self.cache


@dataclass
class JobRecord:
    id: str
    session_id: str
    job: PrecomputeJob
    phase: str = "running"
    error: str | None = None

    @property
    def terminal(self) -> bool:
        return self.phase != "running"

    def snapshot(self) -> dict:
        snap = {"job_id": self.id, "done": self.job.done, "total": self.job.total,
                "phase": self.phase, "terminal": self.terminal}
        if self.error:
            snap["error"] = self.error
        return snap


class SessionStore:
    """Session and job registry with idle-TTL eviction."""

    def __init__(self, ttl: float, recovery_dir: Path | None):
        self.ttl = ttl
        self.recovery_dir = recovery_dir
        self.sessions: dict[str, SessionState] = {}
        self.jobs: dict[str, JobRecord] = {}
        self._lock = threading.Lock()

    def add(self, state: SessionState) -> None:
        with self._lock:
            self.sessions[state.id] = state

    def get(self, session_id: str) -> SessionState:
        self.sweep()
        with self._lock:
            state = self.sessions.get(session_id)
        if state is None:
            raise UnknownSession(f"no session {session_id!r}", session=session_id)
        state.last_active = time.time()
        return state

    def job(self, job_id: str) -> JobRecord:
        with self._lock:
            record = self.jobs.get(job_id)
        if record is None:
            raise UnknownJob(f"no job {job_id!r}", job=job_id)
        return record

    def close(self, session_id: str) -> bool:
        with self._lock:
            state = self.sessions.pop(session_id, None)
        if state is None:
            return False
        if state.cache is not None:
            state.cache.close()
        return True

    def sweep(self) -> list[str]:
        """Evict idle sessions, auto-saving their label maps for recovery."""
        now = time.time()
        with self._lock:
            idle = [s for s in self.sessions.values()
                    if now - s.last_active > self.ttl and s.embed_job_id is None]
        evicted = []
        for state in idle:
            try:
                target_dir = self.recovery_dir or state.volume_path.parent
                export_labelmap(state.label_map,
                                Path(target_dir) / f"{state.id}.recovery.nrrd")
            except Exception:
                pass  # recovery is best-effort; eviction must not fail
            self.close(state.id)
            evicted.append(state.id)
        return evicted


# -- request bodies ---------------------------------------------------------


class CreateSessionBody(BaseModel):
    volume_path: str
    cache_path: str | None = None


class EmbedBody(BaseModel):
    axes: str = "xyz"
    enhance: str = "clahe"
    scalar_type: str = "float16"
    cache_path: str | None = None
    workers: int | None = None


class SegmentBody(BaseModel):
    name: str
    color: list[int] | None = None
    tag: str = "instance"


class PointBody(BaseModel):
    segment: int
    axis: str
    kind: str
    voxel: list[int]


class SliceSelector(BaseModel):
    segment: int
    axis: str
    index: int


class InterpolateBody(BaseModel):
    segment: int
    axis: str
    mode: str = "overwrite"


class EchoBody(BaseModel):
    axis: str
    voxel: list[int] | None = None
    index: int | None = None
    row: int | None = None
    col: int | None = None


def _load_graphs(model_dir: Path | None):
    directory = model_dir if model_dir is not None else stub_model_dir()
    encoder: EncoderGraph | None = None
    decoder: DecoderGraph | None = None
    problems: list[str] = []
    for kind, find in (("encoder", find_encoder), ("decoder", find_decoder)):
        path = find(directory)
        if path is None:
            problems.append(f"no {kind} graph in {directory}")
            continue
        try:
            graph = load_graph(path, kind)
        except VoxelSamError as exc:
            problems.append(f"{kind}: {exc}")
            continue
        if kind == "encoder":
            encoder = graph
        else:
            decoder = graph
    return directory, encoder, decoder, problems


def create_app(model_dir: str | Path | None = None, *,
               session_ttl: float = DEFAULT_SESSION_TTL,
               workers: int | None = None,
               recovery_dir: str | Path | None = None) -> FastAPI:
    """Build the service with its own session store.

    model_dir falls back to the VOXELSAM_MODEL_DIR environment variable
    and then to the stub graphs shipped in the package, so the service is
    usable out of the box for testing and demos.
    """
    directory, encoder, decoder, graph_problems = _load_graphs(
        resolve_model_dir(model_dir))
    store = SessionStore(session_ttl, Path(recovery_dir) if recovery_dir else None)
    export_dir = Path(tempfile.mkdtemp(prefix="voxelsam-export-"))

    app = FastAPI(title="voxelsam", version="1.0", docs_url=None, redoc_url=None)
    app.state.store = store
    app.state.model_dir = directory
    app.state.encoder = encoder
    app.state.decoder = decoder
    app.state.workers = workers
    app.add_middleware(
        CORSMiddleware,
        allow_origin_regex=r"^https?://(localhost|127\.0\.0\.1)(:\d+)?$",
        allow_methods=["*"], allow_headers=["*"])

    @app.exception_handler(VoxelSamError)
    async def _voxelsam_error(request, exc: VoxelSamError):
        return _error_response(exc)

    @app.exception_handler(ValueError)
    async def _value_error(request, exc: ValueError):
        return _error_response(InvalidParams(str(exc)))

    @app.exception_handler(RequestValidationError)
    async def _validation_error(request, exc: RequestValidationError):
        return _error_response(InvalidParams(
            "request body or query failed validation", errors=exc.errors()))

    @app.exception_handler(StarletteHTTPException)
    async def _http_error(request, exc: StarletteHTTPException):
        return JSONResponse(status_code=exc.status_code, content={
            "code": "HTTPError", "message": str(exc.detail), "details": {}})

    def _require_encoder() -> EncoderGraph:
        if encoder is None:
            raise NoEncoder("no encoder graph configured: " +
                            "; ".join(graph_problems or ["model dir empty"]),
                            model_dir=str(directory))
        return encoder

    def _require_decoder() -> DecoderGraph:
        if decoder is None:
            raise NoEncoder("no decoder graph configured: " +
                            "; ".join(graph_problems or ["model dir empty"]),
                            model_dir=str(directory))
        return decoder

    # -- service meta -----------------------------------------------------

    @app.get("/healthz")
    def healthz():
        return {"ok": True, "model_dir": str(directory),
                "encoder": encoder is not None, "decoder": decoder is not None,
                "sessions": len(store.sessions)}

    # -- sessions ----------------------------------------------------------

    @app.post("/sessions")
    def create_session(body: CreateSessionBody):
        volume = load_volume(body.volume_path)
        cache = None
        cache_path = Path(body.cache_path) if body.cache_path else None
        if cache_path is not None:
            cache = open_cache(cache_path)
            if tuple(cache.dims) != volume.dims:
                cache.close()
                raise DimensionMismatch(
                    f"cache dims {tuple(cache.dims)} do not match volume dims "
                    f"{volume.dims}", cache=list(cache.dims), volume=list(volume.dims))
        label_map = LabelMap(volume.dims, volume.spacing)
        state = SessionState(
            id=uuid.uuid4().hex[:12], volume=volume,
            volume_path=Path(body.volume_path), label_map=label_map,
            engine=SegmentationSession(label_map), cache=cache,
            cache_path=cache_path)
        store.add(state)
        return {"session_id": state.id, "dims": list(volume.dims),
                "spacing": list(volume.spacing), "has_cache": cache is not None}

    @app.get("/sessions/{sid}")
    def session_info(sid: str):
        state = store.get(sid)
        return {"session_id": state.id, "dims": list(state.volume.dims),
                "spacing": list(state.volume.spacing),
                "has_cache": state.cache is not None,
                "generation": state.label_map.generation,
                "segments": [m.as_dict() for m in state.label_map.segments()]}

    @app.delete("/sessions/{sid}")
    def close_session(sid: str):
        store.get(sid)
        return {"closed": store.close(sid)}

    # -- embedding jobs ------------------------------------------------------

    @app.post("/sessions/{sid}/embed")
    def start_embed(sid: str, body: EmbedBody):
        state = store.get(sid)
        graph = _require_encoder()
        with state.lock:
            if state.embed_job_id is not None and not store.job(state.embed_job_id).terminal:
                raise EmbedRunning(
                    f"embed job {state.embed_job_id} is still running",
                    job=state.embed_job_id)
            axes = [Axis.parse(c) for c in body.axes]
            if not axes:
                raise InvalidParams("axes must name at least one of x, y, z")
            out_path = Path(body.cache_path) if body.cache_path else (
                state.cache_path or state.volume_path.with_suffix(".vsemb"))
            record = JobRecord(id=uuid.uuid4().hex[:12], session_id=sid,
                               job=PrecomputeJob())
            store.jobs[record.id] = record
            state.embed_job_id = record.id

        def run():
            try:
                cache = precompute(
                    state.volume, axes, graph, out_path, enhance=body.enhance,
                    scalar_type=body.scalar_type,
                    workers=body.workers or workers, job=record.job)
                with state.lock:
                    if state.cache is not None:
                        state.cache.close()
                    state.cache, state.cache_path = cache, out_path
                record.phase = "complete"
            except Cancelled:
                record.phase = "cancelled"
            except Exception as exc:
                record.error = str(exc)
                record.phase = "error"
            finally:
                state.embed_job_id = None

        threading.Thread(target=run, name=f"embed-{record.id}", daemon=True).start()
        return {"job_id": record.id}

    @app.get("/jobs/{jid}")
    def job_status(jid: str):
        return store.job(jid).snapshot()

    @app.post("/jobs/{jid}/cancel")
    def job_cancel(jid: str):
        record = store.job(jid)
        record.job.cancel()
        return record.snapshot()

    @app.get("/jobs/{jid}/events")
    async def job_events(jid: str):
        record = store.job(jid)

        async def stream():
            last = None
            while True:
                snap = record.snapshot()
                if snap != last:
                    yield f"data: {json.dumps(snap)}\n\n"
                    last = snap
                if snap["terminal"]:
                    return
                await asyncio.sleep(0.05)

        return StreamingResponse(stream(), media_type="text/event-stream")

    # -- segments ------------------------------------------------------------

    @app.post("/sessions/{sid}/segments")
    def create_segment(sid: str, body: SegmentBody):
        state = store.get(sid)
        color = tuple(body.color) if body.color else None
        return state.label_map.create_segment(body.name, color, body.tag).as_dict()

    @app.get("/sessions/{sid}/segments")
    def list_segments(sid: str):
        return [m.as_dict() for m in store.get(sid).label_map.segments()]

    @app.delete("/sessions/{sid}/segments/{segment}")
    def delete_segment(sid: str, segment: int):
        state = store.get(sid)
        return {"generation": state.label_map.delete_segment(segment)}

    # -- points and masks ------------------------------------------------------

    @app.post("/sessions/{sid}/points")
    def add_point(sid: str, body: PointBody):
        state = store.get(sid)
        state.label_map.segment(body.segment)
        point = state.engine.add_point(body.segment, body.axis, body.kind,
                                       tuple(body.voxel))
        axis = Axis.parse(body.axis)
        row, col = to_slice_coords(point, axis)
        return {"point_id": point.id, "segment": body.segment,
                "axis": axis.letter, "index": point.voxel[int(axis)],
                "kind": point.kind, "voxel": list(point.voxel),
                "row": row, "col": col}

    @app.delete("/sessions/{sid}/points/{pid}")
    def remove_point(sid: str, pid: str):
        state = store.get(sid)
        ps = state.engine.remove_point(pid)
        return {"removed": pid, "remaining": len(ps.points)}

    @app.post("/sessions/{sid}/points/clear")
    def clear_points(sid: str, body: SliceSelector):
        state = store.get(sid)
        ps = state.engine.clear_points(body.segment, body.axis, body.index)
        return {"remaining": len(ps.points)}

    @app.get("/sessions/{sid}/points")
    def list_points(sid: str, segment: int, axis: str, index: int):
        state = store.get(sid)
        ps = state.engine.prompt_set(segment, Axis.parse(axis), index)
        out = []
        for p in ps.points:
            row, col = to_slice_coords(p, ps.axis)
            out.append({"point_id": p.id, "kind": p.kind, "voxel": list(p.voxel),
                        "row": row, "col": col})
        return out

    @app.get("/sessions/{sid}/mask")
    def get_mask(sid: str, segment: int, axis: str, index: int):
        state = store.get(sid)
        mask = decode_prompt(state.engine, segment, Axis.parse(axis), index,
                             state.require_cache(), _require_decoder())
        return {"segment": segment, "axis": mask.axis.letter, "index": mask.index,
                "score": mask.score, "provenance": mask.provenance,
                "mask": rle.encode_mask(mask.pixels)}

    @app.post("/sessions/{sid}/accept")
    def accept(sid: str, body: SliceSelector):
        state = store.get(sid)
        axis = Axis.parse(body.axis)
        mask = state.engine.last_decoded(body.segment, axis, body.index)
        generation = accept_mask(state.engine, body.segment, mask)
        return {"generation": generation,
                "keyframes": _keyframe_list(state.label_map, body.segment, axis)}

    @app.post("/sessions/{sid}/interpolate")
    def interpolate(sid: str, body: InterpolateBody):
        state = store.get(sid)
        axis = Axis.parse(body.axis)
        written = fill_between(state.label_map, body.segment, axis, body.mode)
        return {"written": written, "generation": state.label_map.generation,
                "keyframes": _keyframe_list(state.label_map, body.segment, axis)}

    @app.post("/sessions/{sid}/undo")
    def undo(sid: str):
        state = store.get(sid)
        return {"generation": state.label_map.undo()}

    @app.get("/sessions/{sid}/keyframes")
    def keyframes(sid: str, segment: int, axis: str):
        state = store.get(sid)
        return _keyframe_list(state.label_map, segment, Axis.parse(axis))

    # -- rasters and export ---------------------------------------------------

    @app.get("/sessions/{sid}/slice")
    def get_slice(sid: str, axis: str, index: int,
                  window_min: float | None = None, window_max: float | None = None):
        state = store.get(sid)
        try:
            img = extract_slice(state.volume, Axis.parse(axis), index)
        except VoxelSamError as exc:
            if exc.code == "IndexOutOfRange":
                return _error_response(exc, status=416)
            raise
        raster = rescale_to_uint8(img.pixels, window_min, window_max)
        ok, png = cv2.imencode(".png", raster)
        if not ok:
            raise InvalidParams("slice could not be encoded as PNG")
        return Response(content=png.tobytes(), media_type="image/png",
                        headers={"X-Slice-Rows": str(raster.shape[0]),
                                 "X-Slice-Cols": str(raster.shape[1])})

    @app.get("/sessions/{sid}/label_slice")
    def label_slice(sid: str, axis: str, index: int):
        state = store.get(sid)
        try:
            section = state.label_map.label_slice(Axis.parse(axis), index)
        except VoxelSamError as exc:
            if exc.code == "IndexOutOfRange":
                return _error_response(exc, status=416)
            raise
        present = [int(s) for s in np.unique(section) if s]
        return {"axis": Axis.parse(axis).letter, "index": index,
                "shape": list(section.shape),
                "segments": [{"segment": s,
                              "mask": rle.encode_mask(section == s)}
                             for s in present]}

    @app.get("/sessions/{sid}/export")
    def export(sid: str, format: str = "nrrd"):
        state = store.get(sid)
        if format not in _EXPORT_FORMATS:
            raise InvalidParams(
                f"format must be one of {sorted(_EXPORT_FORMATS)}", format=format)
        suffix, media_type = _EXPORT_FORMATS[format]
        path = export_dir / f"{sid}-{state.label_map.generation}{suffix}"
        export_labelmap(state.label_map, path, fmt=format)
        return FileResponse(path, media_type=media_type, filename=path.name)

    # -- debug ---------------------------------------------------------------

    @app.post("/sessions/{sid}/debug/point_echo")
    def point_echo(sid: str, body: EchoBody):
        """Echo the server's interpretation of a point, for client testing.

        Give {axis, voxel} to get the slice/row/col the server would use,
        or {axis, index, row, col} to get the voxel back.
        """
        state = store.get(sid)
        axis = Axis.parse(body.axis)
        if body.voxel is not None:
            voxel = state.engine.check_voxel(tuple(body.voxel))
            row, col = to_slice_coords(PromptPoint("echo", "include", voxel), axis)
            return {"axis": axis.letter, "voxel": list(voxel),
                    "index": voxel[int(axis)], "row": row, "col": col}
        if None in (body.index, body.row, body.col):
            raise InvalidParams("give either voxel or (index, row, col)")
        voxel = voxel_from_slice_coords(axis, body.index, body.row, body.col)
        state.engine.check_voxel(voxel)
        return {"axis": axis.letter, "voxel": list(voxel),
                "index": body.index, "row": body.row, "col": body.col}

    return app


def _keyframe_list(lm: LabelMap, segment: int, axis: Axis) -> list[dict]:
    return [{"index": i, "provenance": prov}
            for i, prov in lm.keyframes.items(int(segment), axis)]
