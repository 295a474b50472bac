"""Interactive segmentation sessions: points in, masks out.

A session holds include/exclude points keyed by (segment, axis, slice),
transforms their voxel coordinates into encoder-input space, invokes the
mask decoder against cached embeddings, and hands accepted masks to the
label map. It never touches raw voxel data: decoding sees embeddings only.

Coordinate chain for a point: voxel (x, y, z) -> slice (row, col) by the
slicing convention -> model (col + 0.5, row + 0.5) * scale, mirroring the
pixel-center resize used when the slice was encoded.
"""

from __future__ import annotations

import itertools
import threading
from dataclasses import dataclass, field

import numpy as np

from .embedding_cache import EmbeddingCache
from .errors import (AxisMismatch, EmptyPrompt, IndexOutOfRange,
                     NoDecodedMask, UnknownPoint)
from .labelmap_store import LabelMap, MaskSlice
from .model_runtime import DecoderGraph, decode
from .volume_io import Axis, slice_shape

POINT_KINDS = ("include", "exclude")


@dataclass(frozen=True)
class PromptPoint:
    """One include/exclude click, stored in voxel coordinates."""

    id: str
    kind: str
    voxel: tuple[int, int, int]

    @property
    def label(self) -> int:
        return 1 if self.kind == "include" else 0


@dataclass
class PromptSet:
    """All points for one (segment, axis, slice), plus the decode prior."""

    segment: int
    axis: Axis
    slice_index: int
    points: list[PromptPoint] = field(default_factory=list)
    prior_lowres: np.ndarray | None = None


@dataclass(frozen=True)
class ModelPrompt:
    """Decoder-side payload: model-space coords with include/exclude labels."""

    coords: np.ndarray
    labels: np.ndarray
    prior_mask: np.ndarray | None = None


def slice_index_of(voxel: tuple[int, int, int], axis: Axis) -> int:
    """The slice along ``axis`` that contains the voxel."""
    return int(voxel[int(axis)])


def to_slice_coords(p: PromptPoint, axis: Axis) -> tuple[int, int]:
    """Project a point onto its (row, col) position within its slice.

    Inverse of the voxel <-> pixel mapping used by extract_slice: Z slices
    are (y, x), Y slices (z, x), X slices (z, y).
    """
    x, y, z = p.voxel
    if axis == Axis.Z:
        return int(y), int(x)
    if axis == Axis.Y:
        return int(z), int(x)
    return int(z), int(y)


def voxel_from_slice_coords(axis: Axis, slice_index: int,
                            row: int, col: int) -> tuple[int, int, int]:
    """Rebuild the voxel from a slice position; inverse of to_slice_coords."""
    if axis == Axis.Z:
        return int(col), int(row), int(slice_index)
    if axis == Axis.Y:
        return int(col), int(slice_index), int(row)
    return int(slice_index), int(col), int(row)


def to_model_coords(rc: tuple[float, float], scale: float) -> tuple[float, float]:
    """Map a slice (row, col) to encoder-input (col_model, row_model).

    Pixel-center convention: coordinate = (index + 0.5) * scale, the same
    alignment the encode-time resize used, so prompts land where the
    pixel's content went.
    """
    row, col = rc
    return (float(col) + 0.5) * scale, (float(row) + 0.5) * scale


class SegmentationSession:
    """Single-writer interactive state over one volume's label map.

    Prompt mutations and decodes are serialized per session; distinct
    sessions may run concurrently against the same immutable cache.
    """

    def __init__(self, label_map: LabelMap, *, use_prior: bool = True):
        self.label_map = label_map
        self.dims = label_map.dims
        self.use_prior = use_prior
        self._sets: dict[tuple[int, int, int], PromptSet] = {}
        self._points: dict[str, tuple[int, int, int]] = {}
        self._last: dict[tuple[int, int, int], MaskSlice] = {}
        self._ids = itertools.count(1)
        self.lock = threading.Lock()

    def _key(self, segment: int, axis: Axis, slice_index: int) -> tuple[int, int, int]:
        return int(segment), int(axis), int(slice_index)

    def prompt_set(self, segment: int, axis: Axis | str | int,
                   slice_index: int) -> PromptSet:
        axis = Axis.parse(axis)
        key = self._key(segment, axis, slice_index)
        ps = self._sets.get(key)
        if ps is None:
            ps = PromptSet(int(segment), axis, int(slice_index))
            self._sets[key] = ps
        return ps

    def check_voxel(self, voxel: tuple[int, int, int]) -> tuple[int, int, int]:
        voxel = tuple(int(v) for v in voxel)
        if len(voxel) != 3:
            raise ValueError(f"voxel must be (x, y, z), got {voxel!r}")
        for v, extent, letter in zip(voxel, self.dims, "xyz"):
            if not 0 <= v < extent:
                raise IndexOutOfRange(
                    f"voxel {voxel} outside volume: {letter}={v} not in [0, {extent})",
                    axis=letter, index=v, extent=extent)
        return voxel

    def add_point(self, segment: int, axis: Axis | str | int, kind: str,
                  voxel: tuple[int, int, int],
                  slice_index: int | None = None) -> PromptPoint:
        """Append a point; its slice follows from its coordinate on the axis.

        Raises:
            AxisMismatch: explicit slice_index disagrees with the voxel.
            IndexOutOfRange: voxel outside the volume.
        """
        axis = Axis.parse(axis)
        if kind not in POINT_KINDS:
            raise ValueError(f"kind must be one of {POINT_KINDS}, got {kind!r}")
        voxel = self.check_voxel(voxel)
        implied = slice_index_of(voxel, axis)
        if slice_index is not None and int(slice_index) != implied:
            raise AxisMismatch(
                f"voxel {voxel} lies on slice {implied} of axis {axis.letter}, "
                f"not {slice_index}", axis=axis.letter,
                expected=implied, got=int(slice_index))
        with self.lock:
            point = PromptPoint(f"p{next(self._ids)}", kind, voxel)
            key = self._key(segment, axis, implied)
            self.prompt_set(segment, axis, implied).points.append(point)
            self._points[point.id] = key
            return point

    def remove_point(self, point_id: str) -> PromptSet:
        """Delete one point by id.

        Raises:
            UnknownPoint: no live point has this id.
        """
        with self.lock:
            key = self._points.pop(point_id, None)
            if key is None:
                raise UnknownPoint(f"no point with id {point_id!r}", point_id=point_id)
            ps = self._sets[key]
            ps.points = [p for p in ps.points if p.id != point_id]
            return ps

    def clear_points(self, segment: int, axis: Axis | str | int,
                     slice_index: int) -> PromptSet:
        """Drop all points and the decode prior for one slice."""
        axis = Axis.parse(axis)
        with self.lock:
            ps = self.prompt_set(segment, axis, slice_index)
            for p in ps.points:
                self._points.pop(p.id, None)
            ps.points = []
            ps.prior_lowres = None
            return ps

    def last_decoded(self, segment: int, axis: Axis | str | int,
                     slice_index: int) -> MaskSlice:
        """The most recent decode for this slice, for accept-without-resend.

        Raises:
            NoDecodedMask: nothing was decoded here since the last accept
                or clear.
        """
        axis = Axis.parse(axis)
        mask = self._last.get(self._key(segment, axis, slice_index))
        if mask is None:
            raise NoDecodedMask(
                f"no decoded mask pending for segment {segment}, "
                f"axis {axis.letter}, slice {slice_index}",
                segment=int(segment), axis=axis.letter, index=int(slice_index))
        return mask


def build_model_prompt(ps: PromptSet, scale: float,
                       prior: np.ndarray | None) -> ModelPrompt:
    """Assemble decoder inputs from a prompt set.

    Raises:
        EmptyPrompt: the set has no points.
    """
    if not ps.points:
        raise EmptyPrompt(
            f"no points on segment {ps.segment}, axis {ps.axis.letter}, "
            f"slice {ps.slice_index}")
    coords = np.array([to_model_coords(to_slice_coords(p, ps.axis), scale)
                       for p in ps.points], dtype=np.float32)
    labels = np.array([p.label for p in ps.points], dtype=np.float32)
    return ModelPrompt(coords, labels, prior)


def decode_prompt(session: SegmentationSession, segment: int,
                  axis: Axis | str | int, slice_index: int,
                  cache: EmbeddingCache, decoder: DecoderGraph) -> MaskSlice:
    """Run the decoder for one slice's points and stash the result.

    Thresholds logits at zero, crops model padding back to the slice
    shape, and (with the prior toggle on) feeds this call's low-res
    logits to the next decode on the same slice.

    Raises:
        EmptyPrompt, MissingEntry; CorruptPayload from the cache read.
    """
    axis = Axis.parse(axis)
    with session.lock:
        ps = session.prompt_set(segment, axis, slice_index)
        embedding = cache.get(axis, slice_index)
        scale = cache.scale_for(axis, slice_index)
        prior = ps.prior_lowres if session.use_prior else None
        prompt = build_model_prompt(ps, scale, prior)
        shape = slice_shape(session.dims, axis)
        result = decode(decoder, embedding, prompt, shape)
        if session.use_prior:
            ps.prior_lowres = result.low_res_logits
        mask = MaskSlice(axis=axis, index=int(slice_index), pixels=result.mask,
                         provenance="decoded", score=result.score)
        session._last[session._key(segment, axis, slice_index)] = mask
        return mask


def accept_mask(session: SegmentationSession, segment: int,
                mask: MaskSlice) -> int:
    """Commit a decoded mask: one generation writing voxels + keyframe.

    The slice becomes a keyframe for (segment, axis) with the mask's
    provenance, and the pending decode for that slice is consumed. Prompt
    points are retained.

    Raises:
        ShapeMismatch, UnknownSegment via the label map.
    """
    lm = session.label_map
    provenance = mask.provenance if mask.provenance in ("decoded", "imported") \
        else "decoded"
    with session.lock:
        with lm.transaction():
            lm.write_mask(segment, mask.axis, mask.index, mask.pixels)
            lm.keyframes.register(int(segment), mask.axis, mask.index, provenance)
        session._last.pop(session._key(segment, mask.axis, mask.index), None)
        return lm.generation
