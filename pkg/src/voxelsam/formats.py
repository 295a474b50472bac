"""Low-level readers and writers for the supported volume file formats.

Formats: multi-page grayscale TIFF stacks, NRRD with raw encoding, and
raw little-endian binary with a JSON sidecar. All functions use the
internal array convention: a volume with dims (nx, ny, nz) is a C-order
numpy array of shape (nz, ny, nx), i.e. x is the fastest-varying axis on
disk for raw and NRRD payloads, and each TIFF page is one z-slice.

Only uint8, uint16 and float32 scalars are supported.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import tifffile

from .errors import DimensionMismatch, UnreadableFile, UnsupportedFormat

SUPPORTED_DTYPES = ("uint8", "uint16", "float32")

# numpy little-endian codes per supported dtype name
_LE_DTYPE = {"uint8": "|u1", "uint16": "<u2", "float32": "<f4"}

_NRRD_TYPE_ALIASES = {
    "uchar": "uint8", "unsigned char": "uint8", "uint8": "uint8", "uint8_t": "uint8",
    "ushort": "uint16", "unsigned short": "uint16", "uint16": "uint16", "uint16_t": "uint16",
    "float": "float32", "float32": "float32",
}

_NRRD_TYPE_NAMES = {"uint8": "unsigned char", "uint16": "unsigned short", "float32": "float"}


def check_dtype(name: str) -> str:
    if name not in SUPPORTED_DTYPES:
        raise UnsupportedFormat(f"unsupported scalar type {name!r}", dtype=name)
    return name


def sniff_format(path: str | Path) -> str:
    """Guess the volume format ("tiff" | "nrrd" | "raw") from the path."""
    suffix = Path(path).suffix.lower()
    if suffix in (".tif", ".tiff"):
        return "tiff"
    if suffix == ".nrrd":
        return "nrrd"
    if suffix in (".raw", ".bin", ".json"):
        return "raw"
    raise UnsupportedFormat(f"cannot infer format from {path!r}", path=str(path))


# --- raw binary + JSON sidecar -----------------------------------------

def _raw_pair(path: Path) -> tuple[Path, Path]:
    """Resolve (data file, sidecar file) from either half of a raw pair."""
    if path.suffix.lower() == ".json":
        sidecar = path
        data = path.with_suffix(".raw")
    else:
        data = path
        sidecar = path.with_suffix(".json")
    return data, sidecar


def read_raw(path: str | Path) -> tuple[np.ndarray, tuple[float, float, float]]:
    """Read a raw volume given the path to its data file or JSON sidecar.

    The sidecar is a JSON object with keys ``dims`` ([nx, ny, nz]),
    ``dtype``, optional ``spacing`` ([sx, sy, sz], default 1.0) and
    optional ``data`` naming the payload file. Byte order is little-endian.

    Returns:
        (array of shape (nz, ny, nx), spacing)
    """
    data_path, sidecar_path = _raw_pair(Path(path))
    try:
        meta = json.loads(sidecar_path.read_text())
    except FileNotFoundError:
        raise UnreadableFile(f"missing raw sidecar {sidecar_path}", path=str(sidecar_path))
    except (OSError, json.JSONDecodeError) as exc:
        raise UnreadableFile(f"cannot parse raw sidecar {sidecar_path}: {exc}",
                             path=str(sidecar_path))

    if "data" in meta:
        data_path = sidecar_path.parent / meta["data"]
    try:
        nx, ny, nz = (int(v) for v in meta["dims"])
        dtype = check_dtype(str(meta["dtype"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise UnreadableFile(f"bad raw sidecar {sidecar_path}: {exc}", path=str(sidecar_path))
    if min(nx, ny, nz) < 1:
        raise UnreadableFile(f"non-positive dims {meta['dims']} in {sidecar_path}")
    spacing = tuple(float(v) for v in meta.get("spacing", (1.0, 1.0, 1.0)))

    try:
        payload = data_path.read_bytes()
    except OSError as exc:
        raise UnreadableFile(f"cannot read {data_path}: {exc}", path=str(data_path))
    expected = nx * ny * nz * np.dtype(dtype).itemsize
    if len(payload) != expected:
        raise DimensionMismatch(
            f"raw payload is {len(payload)} bytes, header implies {expected}",
            actual=len(payload), expected=expected)
    arr = np.frombuffer(payload, dtype=_LE_DTYPE[dtype]).reshape(nz, ny, nx)
    return arr.astype(dtype, copy=False), spacing


def write_raw(path: str | Path, data: np.ndarray,
              spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)) -> None:
    """Write (nz, ny, nx) data as little-endian raw bytes plus JSON sidecar."""
    data_path, sidecar_path = _raw_pair(Path(path))
    dtype = check_dtype(data.dtype.name)
    nz, ny, nx = data.shape
    data_path.write_bytes(np.ascontiguousarray(data, dtype=_LE_DTYPE[dtype]).tobytes())
    sidecar = {
        "dims": [nx, ny, nz],
        "dtype": dtype,
        "spacing": list(spacing),
        "byte_order": "little",
        "data": data_path.name,
    }
    sidecar_path.write_text(json.dumps(sidecar, indent=2) + "\n")


# --- NRRD (raw encoding only) ------------------------------------------

def read_nrrd(path: str | Path) -> tuple[np.ndarray, tuple[float, float, float]]:
    """Read a raw-encoded NRRD file. Gzip/other encodings are rejected."""
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as exc:
        raise UnreadableFile(f"cannot read {path}: {exc}", path=str(path))

    end = blob.find(b"\n\n")
    if not blob.startswith(b"NRRD") or end < 0:
        raise UnreadableFile(f"{path} is not a NRRD file", path=str(path))
    header_lines = blob[:end].decode("ascii", errors="replace").splitlines()[1:]
    payload = blob[end + 2:]

    fields: dict[str, str] = {}
    for line in header_lines:
        if line.startswith("#") or not line.strip():
            continue
        key, _, value = line.partition(":")
        fields[key.strip().lower()] = value.strip()

    try:
        if int(fields["dimension"]) != 3:
            raise UnsupportedFormat(f"{path}: only 3D NRRD supported", path=str(path))
        type_name = _NRRD_TYPE_ALIASES.get(fields["type"].lower())
        sizes = [int(v) for v in fields["sizes"].split()]
        encoding = fields["encoding"].lower()
    except KeyError as exc:
        raise UnreadableFile(f"{path}: missing NRRD field {exc}", path=str(path))
    if type_name is None:
        raise UnsupportedFormat(f"{path}: NRRD type {fields['type']!r} unsupported")
    if encoding != "raw":
        raise UnsupportedFormat(f"{path}: NRRD encoding {encoding!r} unsupported (raw only)")
    endian = fields.get("endian", "little").lower()
    if endian != "little" and type_name != "uint8":
        raise UnsupportedFormat(f"{path}: big-endian NRRD unsupported")

    spacing = (1.0, 1.0, 1.0)
    if "spacings" in fields:
        spacing = tuple(float(v) for v in fields["spacings"].split())
    elif "space directions" in fields:
        # parse diagonal of e.g. (0.65,0,0) (0,0.65,0) (0,0,0.65)
        vecs = fields["space directions"].replace("(", " ").replace(")", " ").split()
        try:
            diag = [float(v.split(",")[i]) for i, v in enumerate(vecs)]
            spacing = tuple(abs(d) for d in diag)
        except (ValueError, IndexError):
            pass

    nx, ny, nz = sizes
    expected = nx * ny * nz * np.dtype(type_name).itemsize
    if len(payload) != expected:
        raise DimensionMismatch(
            f"{path}: payload is {len(payload)} bytes, header implies {expected}",
            actual=len(payload), expected=expected)
    arr = np.frombuffer(payload, dtype=_LE_DTYPE[type_name]).reshape(nz, ny, nx)
    return arr.astype(type_name, copy=False), spacing


def write_nrrd(path: str | Path, data: np.ndarray,
               spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)) -> None:
    """Write (nz, ny, nx) data as a raw-encoded little-endian NRRD file."""
    dtype = check_dtype(data.dtype.name)
    nz, ny, nx = data.shape
    header = (
        "NRRD0004\n"
        f"type: {_NRRD_TYPE_NAMES[dtype]}\n"
        "dimension: 3\n"
        f"sizes: {nx} {ny} {nz}\n"
        f"spacings: {spacing[0]} {spacing[1]} {spacing[2]}\n"
        "endian: little\n"
        "encoding: raw\n"
        "\n"
    )
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(np.ascontiguousarray(data, dtype=_LE_DTYPE[dtype]).tobytes())


# --- TIFF stacks --------------------------------------------------------

def read_tiff(path: str | Path) -> tuple[np.ndarray, tuple[float, float, float]]:
    """Read a grayscale TIFF stack; pages become z-slices."""
    path = Path(path)
    try:
        with tifffile.TiffFile(path) as tif:
            arr = tif.asarray()
            description = tif.pages[0].description or ""
    except FileNotFoundError:
        raise UnreadableFile(f"no such file {path}", path=str(path))
    except (OSError, tifffile.TiffFileError, ValueError) as exc:
        raise UnreadableFile(f"cannot read TIFF {path}: {exc}", path=str(path))

    if arr.ndim == 2:
        arr = arr[np.newaxis, :, :]
    if arr.ndim != 3:
        raise UnsupportedFormat(f"{path}: expected grayscale stack, got shape {arr.shape}")
    check_dtype(arr.dtype.name)

    spacing = (1.0, 1.0, 1.0)
    if description:
        try:
            meta = json.loads(description)
            spacing = tuple(float(v) for v in meta["spacing"])
        except (json.JSONDecodeError, KeyError, TypeError, ValueError):
            pass
    return arr, spacing


def write_tiff(path: str | Path, data: np.ndarray,
               spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)) -> None:
    """Write (nz, ny, nx) data as a multi-page grayscale TIFF stack."""
    check_dtype(data.dtype.name)
    tifffile.imwrite(path, np.ascontiguousarray(data),
                     photometric="minisblack",
                     description=json.dumps({"spacing": list(spacing)}))


_READERS = {"tiff": read_tiff, "nrrd": read_nrrd, "raw": read_raw}
_WRITERS = {"tiff": write_tiff, "nrrd": write_nrrd, "raw": write_raw}


def read_any(path: str | Path, fmt: str | None = None):
    """Read a volume payload, sniffing the format unless ``fmt`` is given."""
    fmt = fmt or sniff_format(path)
    if fmt not in _READERS:
        raise UnsupportedFormat(f"unknown format {fmt!r}", format=fmt)
    if not Path(path).exists() and not (fmt == "raw" and _raw_pair(Path(path))[1].exists()):
        raise UnreadableFile(f"no such file {path}", path=str(path))
    return _READERS[fmt](path)


def write_any(path: str | Path, data: np.ndarray,
              spacing: tuple[float, float, float] = (1.0, 1.0, 1.0),
              fmt: str | None = None) -> None:
    """Write a volume payload, sniffing the format unless ``fmt`` is given."""
    fmt = fmt or sniff_format(path)
    if fmt not in _WRITERS:
        raise UnsupportedFormat(f"unknown format {fmt!r}", format=fmt)
    _WRITERS[fmt](path, data, spacing)
