"""Run-length encoding for binary masks on the HTTP wire.

Counts alternate runs of background and foreground over the row-major
flattened mask, always starting with a (possibly zero-length) background
run, so any client can decode with a dozen lines and no image library.
"""

from __future__ import annotations

import numpy as np

from .errors import InvalidParams


def encode_mask(mask: np.ndarray) -> dict:
    """Encode a 2D binary mask as {"shape": [rows, cols], "counts": [...]}."""
    mask = np.asarray(mask).astype(bool)
    if mask.ndim != 2:
        raise InvalidParams(f"mask must be 2D, got shape {mask.shape}")
    flat = mask.ravel()
    if flat.size == 0:
        return {"shape": list(mask.shape), "counts": []}
    edges = np.nonzero(np.diff(flat))[0] + 1
    bounds = np.concatenate(([0], edges, [flat.size]))
    counts = np.diff(bounds).tolist()
    if flat[0]:
        counts.insert(0, 0)
    return {"shape": list(mask.shape), "counts": counts}


def decode_mask(doc: dict) -> np.ndarray:
    """Decode an RLE document back to a 2D bool mask.

    Raises:
        InvalidParams: missing keys, negative counts, or counts that do
            not sum to rows * cols.
    """
    try:
        rows, cols = (int(v) for v in doc["shape"])
        counts = [int(c) for c in doc["counts"]]
    except (KeyError, TypeError, ValueError) as exc:
        raise InvalidParams(f"malformed RLE document: {exc}")
    if rows < 0 or cols < 0 or any(c < 0 for c in counts):
        raise InvalidParams("RLE counts and shape must be non-negative")
    if sum(counts) != rows * cols:
        raise InvalidParams(
            f"RLE counts sum to {sum(counts)}, expected {rows * cols}",
            expected=rows * cols, got=sum(counts))
    flat = np.zeros(rows * cols, dtype=bool)
    pos, value = 0, False
    for run in counts:
        if value:
            flat[pos:pos + run] = True
        pos += run
        value = not value
    return flat.reshape(rows, cols)
