"""Complete segments in 3D by interpolating masks between keyframe slices.

Masks are blended through their exact Euclidean signed distance fields:
the in-between mask at fraction t is { (1-t)·sdf_i + t·sdf_j < 0 }. Linear
SDF blending keeps clean invariants (identity for equal masks, exact
nesting monotonicity) and is well-defined for multi-component shapes.
Components with no overlap between keyframes still blend through the
global field; no per-component correspondence is attempted.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import distance_transform_edt

from .errors import EmptyKeyframe, TooFewKeyframes
from .labelmap_store import LabelMap
from .volume_io import Axis


def signed_distance(mask: np.ndarray) -> np.ndarray:
    """Exact Euclidean signed distance: negative inside, positive outside.

    Pixel-to-pixel distances, so magnitudes are >= 1 everywhere and the
    zero level sits between adjacent inside/outside pixels. Degenerate
    masks return sentinel fields: all +inf when empty, all -inf when full.
    """
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        return np.full(mask.shape, np.inf, dtype=np.float64)
    if mask.all():
        return np.full(mask.shape, -np.inf, dtype=np.float64)
    return distance_transform_edt(~mask) - distance_transform_edt(mask)


@dataclass(frozen=True)
class ShapePair:
    """Two non-empty keyframe masks at indices i < j with their SDFs."""

    index_i: int
    index_j: int
    mask_i: np.ndarray
    mask_j: np.ndarray
    sdf_i: np.ndarray
    sdf_j: np.ndarray

    @classmethod
    def create(cls, index_i: int, mask_i: np.ndarray,
               index_j: int, mask_j: np.ndarray) -> "ShapePair":
        """Build a pair, validating shape, ordering and non-emptiness.

        Raises:
            EmptyKeyframe: either mask has no foreground; annotate or
                delete that keyframe instead of extrapolating to nothing.
        """
        mask_i = np.asarray(mask_i, dtype=bool)
        mask_j = np.asarray(mask_j, dtype=bool)
        if mask_i.shape != mask_j.shape:
            raise ValueError(f"mask shapes differ: {mask_i.shape} vs {mask_j.shape}")
        if not index_i < index_j:
            raise ValueError(f"keyframe order violated: {index_i} >= {index_j}")
        for index, mask in ((index_i, mask_i), (index_j, mask_j)):
            if not mask.any():
                raise EmptyKeyframe(f"keyframe {index} has an empty mask", index=index)
        return cls(int(index_i), int(index_j), mask_i, mask_j,
                   signed_distance(mask_i), signed_distance(mask_j))


def interpolate_pair(pair: ShapePair, t: float) -> np.ndarray:
    """Mask at fraction t in (0, 1) between the pair's keyframes.

    Strict inequality at the zero level: boundary ties fall outside, which
    keeps degenerate cases deterministic.
    """
    if not 0.0 < t < 1.0:
        raise ValueError(f"t must lie strictly inside (0, 1), got {t}")
    return (1.0 - t) * pair.sdf_i + t * pair.sdf_j < 0.0


@dataclass(frozen=True)
class InterpolationPlan:
    """Which slices a fill pass will write, per consecutive keyframe pair."""

    segment: int
    axis: Axis
    pairs: tuple[tuple[int, int], ...]
    between: tuple[tuple[int, ...], ...]
    mode: str = "overwrite"

    @property
    def slice_count(self) -> int:
        return sum(len(b) for b in self.between)


def plan_fill(lm: LabelMap, segment: int, axis: Axis | str | int,
              mode: str = "overwrite") -> InterpolationPlan:
    """Derive the fill plan from the non-interpolated keyframes.

    Raises:
        TooFewKeyframes: fewer than two annotated keyframes exist.
    """
    axis = Axis.parse(axis)
    meta = lm.segment(segment)
    keys = lm.keyframes.indices(meta.id, axis, include_interpolated=False)
    if len(keys) < 2:
        raise TooFewKeyframes(
            f"segment {meta.id} has {len(keys)} keyframe(s) on axis {axis.letter}; "
            "need at least 2", segment=meta.id, axis=axis.letter, found=len(keys))
    pairs = tuple(zip(keys, keys[1:]))
    between = tuple(tuple(range(i + 1, j)) for i, j in pairs)
    return InterpolationPlan(meta.id, axis, pairs, between, mode)


def fill_between(lm: LabelMap, segment: int, axis: Axis | str | int,
                 mode: str = "overwrite") -> int:
    """Interpolate every gap between consecutive keyframes of a segment.

    Writes interpolate_pair at t = (k-i)/(j-i) for each k strictly between
    each consecutive keyframe pair (i, j), marks those slices interpolated,
    and commits the whole fill as one undoable generation. Keyframe slices
    and slices outside [first, last] are untouched.

    Returns the number of slices written.

    Raises:
        TooFewKeyframes, EmptyKeyframe.
    """
    plan = plan_fill(lm, segment, axis, mode)
    masks = {k: lm.get_mask(plan.segment, plan.axis, k).pixels
             for pair in plan.pairs for k in pair}
    for k in sorted(masks):
        if not masks[k].any():
            raise EmptyKeyframe(f"keyframe {k} has an empty mask", index=k)

    written = 0
    with lm.transaction():
        for (i, j), gaps in zip(plan.pairs, plan.between):
            if not gaps:
                continue
            pair = ShapePair.create(i, masks[i], j, masks[j])
            for k in gaps:
                t = (k - i) / (j - i)
                lm.write_mask(plan.segment, plan.axis, k,
                              interpolate_pair(pair, t), mode=plan.mode)
                lm.keyframes.register(plan.segment, plan.axis, k, "interpolated")
                written += 1
    return written
