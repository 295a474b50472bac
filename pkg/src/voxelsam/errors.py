"""Exception hierarchy with stable machine-readable codes.

Every error carries a ``code`` string that is part of the public contract:
the HTTP service returns it in error bodies and the CLI prints it on
failure. Codes never change once released.
"""

from __future__ import annotations

from typing import Any


class VoxelSamError(Exception):
    """Base class for all domain errors."""

    code = "Error"

    def __init__(self, message: str = "", **details: Any):
        super().__init__(message or self.code)
        self.message = message or self.code
        self.details = details


# --- volume_io ---------------------------------------------------------

class UnreadableFile(VoxelSamError):
    code = "UnreadableFile"


class UnsupportedFormat(VoxelSamError):
    code = "UnsupportedFormat"


class DimensionMismatch(VoxelSamError):
    code = "DimensionMismatch"


class IndexOutOfRange(VoxelSamError):
    code = "IndexOutOfRange"


class InvalidParams(VoxelSamError):
    code = "InvalidParams"


# --- model_runtime -----------------------------------------------------

class GraphLoadError(VoxelSamError):
    code = "GraphLoadError"


class InterfaceMismatch(VoxelSamError):
    code = "InterfaceMismatch"


class ExecutionError(VoxelSamError):
    code = "ExecutionError"


class EmptyPrompt(VoxelSamError):
    code = "EmptyPrompt"


# --- embedding_cache ---------------------------------------------------

class DiskFull(VoxelSamError):
    code = "DiskFull"


class Cancelled(VoxelSamError):
    code = "Cancelled"


class IncompleteCache(VoxelSamError):
    code = "IncompleteCache"


class VersionMismatch(VoxelSamError):
    code = "VersionMismatch"


class MissingEntry(VoxelSamError):
    code = "MissingEntry"


class CorruptPayload(VoxelSamError):
    code = "CorruptPayload"


# --- prompt_engine -----------------------------------------------------

class AxisMismatch(VoxelSamError):
    code = "AxisMismatch"


class ScaleMissing(VoxelSamError):
    code = "ScaleMissing"


class UnknownPoint(VoxelSamError):
    code = "UnknownPoint"


# --- labelmap_store ----------------------------------------------------

class ShapeMismatch(VoxelSamError):
    code = "ShapeMismatch"


class UnknownSegment(VoxelSamError):
    code = "UnknownSegment"


class NothingToUndo(VoxelSamError):
    code = "NothingToUndo"


# --- slice_interpolation -----------------------------------------------

class TooFewKeyframes(VoxelSamError):
    code = "TooFewKeyframes"


class EmptyKeyframe(VoxelSamError):
    code = "EmptyKeyframe"


# --- service_api -------------------------------------------------------

class UnknownSession(VoxelSamError):
    code = "UnknownSession"


class EmbedRunning(VoxelSamError):
    code = "EmbedRunning"


class NoEncoder(VoxelSamError):
    code = "NoEncoder"


class NoDecodedMask(VoxelSamError):
    code = "NoDecodedMask"


class UnknownJob(VoxelSamError):
    code = "UnknownJob"
