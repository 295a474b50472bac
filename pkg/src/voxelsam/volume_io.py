"""Volume loading, Cartesian slicing and contrast enhancement.

Coordinate conventions (shared by the whole package — the embedding
cache, the prompt transforms and the UI all rely on them):

* A volume has dims (nx, ny, nz) and is stored as a read-only C-order
  array of shape (nz, ny, nx); voxel (x, y, z) is ``data[z, y, x]``.
* Slicing along Z at index k yields (rows, cols) = (ny, nx) with
  pixel (r, c) = voxel (x=c, y=r, z=k).
* Slicing along Y yields (nz, nx) with pixel (r, c) = voxel (c, k, r).
* Slicing along X yields (nz, ny) with pixel (r, c) = voxel (k, c, r).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path

import cv2
import numpy as np

from . import formats
from .errors import IndexOutOfRange, InvalidParams

DEFAULT_CLAHE_CLIP_LIMIT = 2.0
DEFAULT_CLAHE_TILE_GRID = 8

ENHANCE_METHODS = ("none", "global-equalize", "clahe")


class Axis(IntEnum):
    """The three Cartesian slicing directions."""

    X = 0
    Y = 1
    Z = 2

    @classmethod
    def parse(cls, value: "Axis | int | str") -> "Axis":
        if isinstance(value, Axis):
            return value
        if isinstance(value, str):
            try:
                return cls[value.strip().upper()]
            except KeyError:
                raise InvalidParams(f"unknown axis {value!r}", axis=value)
        return cls(value)

    @property
    def letter(self) -> str:
        return self.name.lower()


@dataclass(frozen=True)
class SliceImage:
    """One 2D cross-section of a volume."""

    axis: Axis
    index: int
    pixels: np.ndarray  # (rows, cols), read-only

    @property
    def shape(self) -> tuple[int, int]:
        return self.pixels.shape  # type: ignore[return-value]


@dataclass(frozen=True)
class Volume3D:
    """Immutable 3D scalar grid with voxel spacing and intensity range."""

    data: np.ndarray  # (nz, ny, nx), read-only
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)
    intensity_min: float = field(default=0.0)
    intensity_max: float = field(default=0.0)

    def __post_init__(self):
        if self.data.ndim != 3:
            raise InvalidParams(f"volume data must be 3D, got shape {self.data.shape}")
        formats.check_dtype(self.data.dtype.name)
        self.data.flags.writeable = False

    @classmethod
    def from_array(cls, data: np.ndarray,
                   spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)) -> "Volume3D":
        """Wrap a (nz, ny, nx) array, computing the intensity range by full scan."""
        data = np.ascontiguousarray(data)
        formats.check_dtype(data.dtype.name)
        return cls(data=data, spacing=tuple(float(s) for s in spacing),
                   intensity_min=float(data.min()), intensity_max=float(data.max()))

    @property
    def dims(self) -> tuple[int, int, int]:
        nz, ny, nx = self.data.shape
        return (nx, ny, nz)

    @property
    def dtype(self) -> str:
        return self.data.dtype.name

    def extent(self, axis: Axis | int | str) -> int:
        return self.dims[int(Axis.parse(axis))]

    def voxel(self, x: int, y: int, z: int):
        return self.data[z, y, x]


def slice_shape(dims: tuple[int, int, int], axis: Axis | int | str) -> tuple[int, int]:
    """(rows, cols) of a cross-section along ``axis`` for a volume of ``dims``."""
    nx, ny, nz = dims
    axis = Axis.parse(axis)
    if axis is Axis.Z:
        return (ny, nx)
    if axis is Axis.Y:
        return (nz, nx)
    return (nz, ny)


def load_volume(path: str | Path, fmt: str | None = None) -> Volume3D:
    """Load a volume from disk.

    Supported formats: multi-page grayscale TIFF, raw-encoded NRRD, and
    raw binary with a JSON sidecar. ``fmt`` ("tiff" | "nrrd" | "raw")
    overrides extension sniffing.

    Raises:
        UnreadableFile: missing or malformed file.
        UnsupportedFormat: format or scalar type outside the supported set.
        DimensionMismatch: header dims disagree with the payload size.
    """
    arr, spacing = formats.read_any(path, fmt)
    return Volume3D.from_array(arr, spacing)


def save_volume(path: str | Path, vol: Volume3D, fmt: str | None = None) -> None:
    """Write a volume back to disk in any supported format."""
    formats.write_any(path, vol.data, vol.spacing, fmt)


def extract_slice(vol: Volume3D, axis: Axis | int | str, index: int) -> SliceImage:
    """Extract one 2D slice; pixel values are copied, never aliased.

    Raises:
        IndexOutOfRange: ``index`` outside [0, extent(axis)).
    """
    axis = Axis.parse(axis)
    extent = vol.extent(axis)
    if not 0 <= index < extent:
        raise IndexOutOfRange(
            f"slice {index} outside [0, {extent}) along {axis.name}",
            axis=axis.letter, index=index, extent=extent)
    if axis is Axis.Z:
        pixels = vol.data[index, :, :]
    elif axis is Axis.Y:
        pixels = vol.data[:, index, :]
    else:
        pixels = vol.data[:, :, index]
    pixels = pixels.copy()
    pixels.flags.writeable = False
    return SliceImage(axis=axis, index=int(index), pixels=pixels)


def rescale_to_uint8(pixels: np.ndarray, lo: float | None = None,
                     hi: float | None = None) -> np.ndarray:
    """Linear min-max (or windowed) rescale to uint8.

    ``lo`` maps to 0 and ``hi`` to 255; values outside the window clip.
    A zero-width window degenerates to clipping the constant value into
    [0, 255], which keeps already-8-bit constant images unchanged.
    """
    pixels = np.asarray(pixels)
    lo = float(pixels.min()) if lo is None else float(lo)
    hi = float(pixels.max()) if hi is None else float(hi)
    if hi < lo:
        raise InvalidParams(f"window [{lo}, {hi}] is inverted")
    if hi == lo:
        return np.full(pixels.shape, np.clip(lo, 0, 255), dtype=np.uint8)
    scaled = (pixels.astype(np.float64) - lo) * (255.0 / (hi - lo))
    return np.clip(np.floor(scaled + 0.5), 0, 255).astype(np.uint8)


def _equalize_global(img: np.ndarray) -> np.ndarray:
    # v -> floor(cdf(v) * 255); the truncation is part of the contract.
    counts = np.bincount(img.ravel(), minlength=256)
    cdf = np.cumsum(counts, dtype=np.float64) / img.size
    lut = np.floor(cdf * 255.0).astype(np.uint8)
    return lut[img]


def enhance_contrast(img: SliceImage, method: str = "clahe", *,
                     clip_limit: float = DEFAULT_CLAHE_CLIP_LIMIT,
                     tile_grid: int = DEFAULT_CLAHE_TILE_GRID) -> SliceImage:
    """Contrast-enhance a slice ahead of embedding computation.

    The output is always uint8. Non-8-bit inputs are min-max rescaled to
    uint8 first; ``method="none"`` applies only that rescale. Zero-variance
    slices pass through the enhancement step untouched (equalization is
    undefined there). Deterministic for fixed parameters.

    Raises:
        InvalidParams: unknown method, clip_limit <= 0 or tile_grid < 1.
    """
    if method not in ENHANCE_METHODS:
        raise InvalidParams(f"unknown enhancement method {method!r}", method=method)
    if clip_limit <= 0:
        raise InvalidParams(f"clip_limit must be > 0, got {clip_limit}")
    if tile_grid < 1:
        raise InvalidParams(f"tile_grid must be >= 1, got {tile_grid}")

    pixels = img.pixels
    flat = pixels.astype(np.float64, copy=False)
    constant = flat.min() == flat.max()
    out = rescale_to_uint8(pixels)

    if not constant and method == "global-equalize":
        out = _equalize_global(out)
    elif not constant and method == "clahe":
        rows, cols = out.shape
        grid = max(1, min(tile_grid, rows, cols))
        clahe = cv2.createCLAHE(clipLimit=float(clip_limit), tileGridSize=(grid, grid))
        out = clahe.apply(out)

    out.flags.writeable = False
    return SliceImage(axis=img.axis, index=img.index, pixels=out)
