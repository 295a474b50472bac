"""Per-slice embedding precompute and the on-disk .vsemb cache format.

The cache decouples the heavy encoder from the interactive loop: one
offline pass encodes every slice along the requested Cartesian axes, and
the interactive decoder then random-accesses single tensors without
deserializing the file.

File layout (all integers little-endian):

    magic "VSEM" | u32 version | u32 header_len | header JSON (padded)
    then per entry, in (axis, index) ascending order:
    u32 axis | u32 index | u64 payload_len | payload | u64 xxh3-64 checksum

The header JSON carries dims, cached axes, embedding shape, scalar type
(float16 on disk by default, float32 optional), the encoder's model
hash, the preprocessing descriptor, the per-slice resize scale table, a
creation timestamp and a ``complete`` flag. The flag is written false
first and flipped in place once the final entry lands, so a crashed or
cancelled run leaves a file that open_cache rejects as incomplete. The
JSON is space-padded so both serializations occupy identical bytes.
"""

from __future__ import annotations

import errno
import json
import mmap
import os
import struct
import threading
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np
import xxhash

from .errors import (Cancelled, CorruptPayload, DiskFull, IncompleteCache,
                     MissingEntry, ScaleMissing, VersionMismatch)
from .model_runtime import EncoderGraph, encode, resize_scale
from .volume_io import Axis, Volume3D, enhance_contrast, extract_slice, slice_shape

MAGIC = b"VSEM"
VERSION = 1

_PREFIX = struct.Struct("<4sII")   # magic, version, header_len
_ENTRY_HEAD = struct.Struct("<IIQ")  # axis, index, payload_len
_CHECKSUM = struct.Struct("<Q")

_SCALAR_DTYPES = {"float16": "<f2", "float32": "<f4"}


def _checksum(payload: bytes | memoryview) -> int:
    return xxhash.xxh3_64_intdigest(payload)


class PrecomputeJob:
    """Thread-safe progress counter and cancellation flag for one precompute."""

    def __init__(self, total: int = 0):
        self.total = total
        self._done = 0
        self._cancelled = False
        self._lock = threading.Lock()

    @property
    def done(self) -> int:
        return self._done

    @property
    def cancelled(self) -> bool:
        return self._cancelled

    def advance(self, n: int = 1) -> None:
        with self._lock:
            self._done += n

    def cancel(self) -> None:
        self._cancelled = True


def _build_header(vol_dims: tuple[int, int, int], axes: list[Axis],
                  embedding_shape: tuple[int, int, int], scalar_type: str,
                  model_hash: str, preprocessing: dict, input_side: int) -> dict:
    scale_table = {
        a.letter: [resize_scale(slice_shape(vol_dims, a), input_side)] * vol_dims[int(a)]
        for a in axes
    }
    return {
        "version": VERSION,
        "dims": list(vol_dims),
        "axes": [a.letter for a in axes],
        "embedding_shape": list(embedding_shape),
        "scalar_type": scalar_type,
        "model_hash": model_hash,
        "preprocessing": preprocessing,
        "scale_table": scale_table,
        "created": datetime.now(timezone.utc).isoformat(timespec="seconds"),
        "entry_count": sum(vol_dims[int(a)] for a in axes),
        "complete": False,
    }


class _CacheWriter:
    """Streams entries to disk; the header completeness flag flips on finalize."""

    def __init__(self, path: Path, header: dict):
        self._path = path
        final = dict(header, complete=True)
        final_json = json.dumps(final, sort_keys=True).encode()
        initial_json = json.dumps(header, sort_keys=True).encode()
        self._header_len = max(len(final_json), len(initial_json)) + 8
        self._final_json = final_json.ljust(self._header_len)
        try:
            self._fh = open(path, "wb")
            self._fh.write(_PREFIX.pack(MAGIC, VERSION, self._header_len))
            self._fh.write(initial_json.ljust(self._header_len))
        except OSError as exc:
            raise self._map_oserror(exc)

    @staticmethod
    def _map_oserror(exc: OSError):
        if exc.errno == errno.ENOSPC:
            return DiskFull(str(exc))
        return exc

    def write_entry(self, axis: Axis, index: int, tensor: np.ndarray,
                    scalar_type: str) -> None:
        payload = np.ascontiguousarray(tensor, dtype=_SCALAR_DTYPES[scalar_type]).tobytes()
        try:
            self._fh.write(_ENTRY_HEAD.pack(int(axis), int(index), len(payload)))
            self._fh.write(payload)
            self._fh.write(_CHECKSUM.pack(_checksum(payload)))
        except OSError as exc:
            raise self._map_oserror(exc)

    def finalize(self) -> None:
        self._fh.flush()
        self._fh.seek(_PREFIX.size)
        self._fh.write(self._final_json)
        self._fh.flush()
        os.fsync(self._fh.fileno())
        self._fh.close()

    def abandon(self) -> None:
        """Close without completing; the file stays marked incomplete."""
        try:
            self._fh.close()
        except OSError:
            pass


def precompute(vol: Volume3D, axes: Iterable[Axis | str], encoder: EncoderGraph,
               out_path: str | Path, *, enhance: str = "clahe",
               enhance_params: dict | None = None, scalar_type: str = "float16",
               workers: int | None = None,
               job: PrecomputeJob | None = None) -> "EmbeddingCache":
    """Encode every slice along ``axes`` and persist the cache file.

    Each entry is exactly encode(enhance_contrast(extract_slice(vol, a, i)))
    with the chosen enhancement. Slices fan out to a thread pool; a single
    writer consumes results in slice order, so the output file is
    byte-identical regardless of the worker count.

    Raises:
        Cancelled: the job's flag was set; a partial file marked incomplete
            remains on disk.
        DiskFull, ExecutionError: propagated from writing/encoding.
    """
    axes = sorted(Axis.parse(a) for a in set(axes))
    if not axes:
        raise ValueError("axes must be non-empty")
    if scalar_type not in _SCALAR_DTYPES:
        raise ValueError(f"scalar_type must be one of {sorted(_SCALAR_DTYPES)}")
    out_path = Path(out_path)
    params = dict(enhance_params or {})
    preprocessing = {"method": enhance, "params": params}

    header = _build_header(vol.dims, axes, encoder.embedding_shape, scalar_type,
                           encoder.model_hash, preprocessing, encoder.input_side)
    tasks = [(a, i) for a in axes for i in range(vol.extent(a))]
    if job is None:
        job = PrecomputeJob(total=len(tasks))
    else:
        job.total = len(tasks)

    def work(task: tuple[Axis, int]) -> np.ndarray:
        a, i = task
        img = enhance_contrast(extract_slice(vol, a, i), enhance, **params)
        return encode(encoder, img)

    writer = _CacheWriter(out_path, header)
    n_workers = max(1, workers or os.cpu_count() or 1)
    try:
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            window: deque = deque()
            it = iter(tasks)

            def top_up() -> None:
                while len(window) < 2 * n_workers:
                    task = next(it, None)
                    if task is None:
                        return
                    window.append((task, pool.submit(work, task)))

            top_up()
            while window:
                if job.cancelled:
                    for _, fut in window:
                        fut.cancel()
                    writer.abandon()
                    raise Cancelled("precompute cancelled", done=job.done, total=job.total)
                (axis, index), fut = window.popleft()
                writer.write_entry(axis, index, fut.result(), scalar_type)
                job.advance()
                top_up()
        writer.finalize()
    except Cancelled:
        raise
    except BaseException:
        writer.abandon()
        raise
    return open_cache(out_path)


@dataclass
class _Problem:
    code: str
    message: str
    axis: str | None = None
    index: int | None = None

    def as_dict(self) -> dict:
        d = {"code": self.code, "message": self.message}
        if self.axis is not None:
            d["axis"] = self.axis
        if self.index is not None:
            d["index"] = self.index
        return d


@dataclass
class CacheReport:
    """Machine-readable result of verify_cache."""

    path: str
    ok: bool = True
    header: dict | None = None
    entry_counts: dict[str, int] = field(default_factory=dict)
    problems: list[_Problem] = field(default_factory=list)

    def add(self, code: str, message: str, axis: str | None = None,
            index: int | None = None) -> None:
        self.ok = False
        self.problems.append(_Problem(code, message, axis, index))

    def as_dict(self) -> dict:
        return {
            "path": self.path,
            "ok": self.ok,
            "entry_counts": self.entry_counts,
            "problems": [p.as_dict() for p in self.problems],
        }


class EmbeddingCache:
    """Read handle over a complete cache file.

    Opening costs O(header + entry index); payloads are memory-mapped and
    only touched by get(). Instances are immutable and safe to share
    across concurrent readers.
    """

    def __init__(self, path: str | Path):
        self.path = Path(path)
        try:
            self._fh = open(self.path, "rb")
        except OSError as exc:
            raise IncompleteCache(f"cannot open {path}: {exc}", path=str(path))
        try:
            self._mm = mmap.mmap(self._fh.fileno(), 0, access=mmap.ACCESS_READ)
        except ValueError:
            self._fh.close()
            raise IncompleteCache(f"{path} is empty", path=str(path))
        try:
            self.header = _read_header(self._mm, str(path), require_complete=True)
            self._index = _scan_entries(self._mm, self.header, str(path))
        except Exception:
            self.close()
            raise
        self.dims = tuple(self.header["dims"])
        self.axes = [Axis.parse(a) for a in self.header["axes"]]
        self.embedding_shape = tuple(self.header["embedding_shape"])
        self.scalar_type = self.header["scalar_type"]
        self.model_hash = self.header["model_hash"]
        self.preprocessing = self.header["preprocessing"]
        self._dtype = np.dtype(_SCALAR_DTYPES[self.scalar_type])

    def __enter__(self) -> "EmbeddingCache":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def close(self) -> None:
        if getattr(self, "_mm", None) is not None:
            self._mm.close()
            self._mm = None
        if getattr(self, "_fh", None) is not None:
            self._fh.close()
            self._fh = None

    def __contains__(self, key: tuple[Axis | int | str, int]) -> bool:
        axis, index = key
        return (int(Axis.parse(axis)), int(index)) in self._index

    def entries(self) -> Iterator[tuple[Axis, int]]:
        for axis_int, index in sorted(self._index):
            yield Axis(axis_int), index

    def scale_for(self, axis: Axis | int | str, index: int) -> float:
        axis = Axis.parse(axis)
        table = self.header.get("scale_table", {}).get(axis.letter)
        if table is None or not 0 <= index < len(table):
            raise ScaleMissing(f"no resize scale recorded for ({axis.letter}, {index})",
                               axis=axis.letter, index=index)
        return float(table[index])

    def get(self, axis: Axis | int | str, index: int) -> np.ndarray:
        """Read one embedding, checksum-verified, decoded to float32.

        Raises:
            MissingEntry: (axis, index) not cached.
            CorruptPayload: stored checksum does not match.
        """
        axis = Axis.parse(axis)
        key = (int(axis), int(index))
        if key not in self._index:
            raise MissingEntry(f"({axis.letter}, {index}) not in cache",
                               axis=axis.letter, index=int(index))
        offset, length = self._index[key]
        payload = memoryview(self._mm)[offset:offset + length]
        (stored,) = _CHECKSUM.unpack_from(self._mm, offset + length)
        if _checksum(payload) != stored:
            raise CorruptPayload(f"checksum mismatch at ({axis.letter}, {index})",
                                 axis=axis.letter, index=int(index))
        arr = np.frombuffer(payload, dtype=self._dtype)
        return arr.astype(np.float32).reshape(self.embedding_shape)


def open_cache(path: str | Path) -> EmbeddingCache:
    """Open a cache file for reading.

    Raises:
        IncompleteCache: truncated file or unfinished precompute.
        VersionMismatch: written by an incompatible format version.
        CorruptPayload: structural damage (bad magic, impossible sizes).
    """
    return EmbeddingCache(path)


def _read_header(mm, path: str, require_complete: bool) -> dict:
    if len(mm) < _PREFIX.size:
        raise IncompleteCache(f"{path}: truncated before header", path=path)
    magic, version, header_len = _PREFIX.unpack_from(mm, 0)
    if magic != MAGIC:
        raise CorruptPayload(f"{path}: bad magic {magic!r}", path=path)
    if version != VERSION:
        raise VersionMismatch(f"{path}: format version {version}, expected {VERSION}",
                              found=version, expected=VERSION)
    if len(mm) < _PREFIX.size + header_len:
        raise IncompleteCache(f"{path}: truncated header", path=path)
    try:
        header = json.loads(bytes(mm[_PREFIX.size:_PREFIX.size + header_len]))
    except json.JSONDecodeError as exc:
        raise CorruptPayload(f"{path}: unparseable header: {exc}", path=path)
    missing = {"dims", "axes", "embedding_shape", "scalar_type",
               "entry_count"} - header.keys()
    if missing:
        raise CorruptPayload(f"{path}: header missing {sorted(missing)}", path=path)
    if require_complete and not header.get("complete", False):
        raise IncompleteCache(f"{path}: cache marked incomplete", path=path)
    return header


def _scan_entries(mm, header: dict, path: str) -> dict[tuple[int, int], tuple[int, int]]:
    index: dict[tuple[int, int], tuple[int, int]] = {}
    item_size = int(np.prod(header["embedding_shape"])) * \
        np.dtype(_SCALAR_DTYPES[header["scalar_type"]]).itemsize
    header_len = _PREFIX.unpack_from(mm, 0)[2]
    pos = _PREFIX.size + header_len
    end = len(mm)
    while pos < end:
        if pos + _ENTRY_HEAD.size > end:
            raise IncompleteCache(f"{path}: truncated entry header", path=path)
        axis, idx, length = _ENTRY_HEAD.unpack_from(mm, pos)
        pos += _ENTRY_HEAD.size
        if axis not in (0, 1, 2) or not 0 <= idx < int(header["dims"][axis]):
            raise CorruptPayload(
                f"{path}: entry header names an impossible slice "
                f"(axis={axis}, index={idx})", path=path)
        if length != item_size:
            raise CorruptPayload(
                f"{path}: entry ({Axis(axis).letter}, {idx}) payload is {length} bytes, "
                f"header implies {item_size}", axis=Axis(axis).letter, index=idx)
        if pos + length + _CHECKSUM.size > end:
            raise IncompleteCache(f"{path}: truncated payload", path=path)
        index[(axis, idx)] = (pos, length)
        pos += length + _CHECKSUM.size
    if len(index) != header.get("entry_count", len(index)):
        raise IncompleteCache(
            f"{path}: {len(index)} entries, header promises {header.get('entry_count')}",
            path=path)
    return index


def verify_cache(path: str | Path) -> CacheReport:
    """Validate magic, version, completeness, checksums and entry counts.

    Never raises; all failures land in the returned report.
    """
    report = CacheReport(path=str(path))
    try:
        fh = open(path, "rb")
    except OSError as exc:
        report.add("UnreadableFile", str(exc))
        return report
    with fh:
        try:
            mm = mmap.mmap(fh.fileno(), 0, access=mmap.ACCESS_READ)
        except ValueError:
            report.add("IncompleteCache", "file is empty")
            return report
        with mm:
            try:
                header = _read_header(mm, str(path), require_complete=False)
            except Exception as exc:
                report.add(getattr(exc, "code", "CorruptPayload"), str(exc))
                return report
            report.header = header
            if not header.get("complete", False):
                report.add("IncompleteCache", "cache marked incomplete")
            try:
                index = _scan_entries(mm, header, str(path))
            except Exception as exc:
                report.add(getattr(exc, "code", "CorruptPayload"), str(exc),
                           axis=getattr(exc, "details", {}).get("axis"),
                           index=getattr(exc, "details", {}).get("index"))
                return report

            counts: dict[str, int] = {}
            for (axis_int, idx), (offset, length) in sorted(index.items()):
                letter = Axis(axis_int).letter
                counts[letter] = counts.get(letter, 0) + 1
                (stored,) = _CHECKSUM.unpack_from(mm, offset + length)
                if _checksum(memoryview(mm)[offset:offset + length]) != stored:
                    report.add("CorruptPayload", "checksum mismatch", axis=letter, index=idx)
            report.entry_counts = counts

            dims = header.get("dims", [0, 0, 0])
            for letter in header.get("axes", []):
                expected = dims[int(Axis.parse(letter))]
                if counts.get(letter, 0) != expected:
                    report.add("MissingEntry",
                               f"axis {letter} has {counts.get(letter, 0)} entries, "
                               f"extent is {expected}", axis=letter)
    return report
