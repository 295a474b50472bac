/** Viewer state and interaction planning, kept pure for testing.
 *
 * Invariants enforced here: slice indices stay within the volume dims,
 * exactly one tool is active, and the overlay always shows the latest
 * server-decoded mask for the visible (axis, index) — older in-flight
 * responses lose, and a slice is flagged stale until its decode lands.
 */

import type { AxisLetter, Dims, SlicePixel, ViewTransform, Voxel } from "./coords.js";
import { AXES, pixelToVoxel, screenToPixel, sliceExtent, sliceShape } from "./coords.js";
import type { RleMask } from "./rle.js";

export type Tool = "include" | "exclude" | "erase-point";

export interface ViewerState {
  activeAxis: AxisLetter;
  indices: Record<AxisLetter, number>;
  transforms: Record<AxisLetter, ViewTransform>;
  window: [number, number];
  activeSegment: number | null;
  tool: Tool;
  overlayOpacity: number;
}

export function initialViewerState(dims: Dims): ViewerState {
  const indices = {} as Record<AxisLetter, number>;
  const transforms = {} as Record<AxisLetter, ViewTransform>;
  for (const axis of AXES) {
    indices[axis] = Math.floor(sliceExtent(dims, axis) / 2);
    transforms[axis] = { zoom: 1, panX: 0, panY: 0 };
  }
  return {
    activeAxis: "z",
    indices,
    transforms,
    window: [0, 255],
    activeSegment: null,
    tool: "include",
    overlayOpacity: 0.5,
  };
}

/** Clamp-setting a slice index; scrubbing can never leave the volume. */
export function setSliceIndex(
  state: ViewerState, dims: Dims, axis: AxisLetter, index: number,
): ViewerState {
  const max = sliceExtent(dims, axis) - 1;
  const clamped = Math.min(Math.max(Math.round(index), 0), Math.max(max, 0));
  return { ...state, indices: { ...state.indices, [axis]: clamped } };
}

export function stepSlice(
  state: ViewerState, dims: Dims, axis: AxisLetter, delta: number,
): ViewerState {
  return setSliceIndex(state, dims, axis, (state.indices[axis] ?? 0) + delta);
}

export function setTool(state: ViewerState, tool: Tool): ViewerState {
  return { ...state, tool };
}

export function setActiveSegment(state: ViewerState, id: number | null): ViewerState {
  return { ...state, activeSegment: id };
}

/** Zoom keeping the given canvas point over the same slice pixel. */
export function zoomAround(
  state: ViewerState, axis: AxisLetter, factor: number, sx: number, sy: number,
): ViewerState {
  const t = state.transforms[axis];
  const zoom = Math.min(Math.max(t.zoom * factor, 0.25), 32);
  const scale = zoom / t.zoom;
  const next: ViewTransform = {
    zoom,
    panX: sx - (sx - t.panX) * scale,
    panY: sy - (sy - t.panY) * scale,
  };
  return { ...state, transforms: { ...state.transforms, [axis]: next } };
}

export function panBy(
  state: ViewerState, axis: AxisLetter, dx: number, dy: number,
): ViewerState {
  const t = state.transforms[axis];
  const next = { ...t, panX: t.panX + dx, panY: t.panY + dy };
  return { ...state, transforms: { ...state.transforms, [axis]: next } };
}

export type ClickPlan =
  | { action: "ignore" }
  | { action: "needs-segment" }
  | { action: "add-point"; kind: "include" | "exclude"; voxel: Voxel; pixel: SlicePixel }
  | { action: "erase-at"; pixel: SlicePixel };

/** Decide what a canvas click means before any network traffic happens. */
export function planClick(
  state: ViewerState, dims: Dims, axis: AxisLetter, sx: number, sy: number,
): ClickPlan {
  const pixel = screenToPixel(sx, sy, state.transforms[axis], sliceShape(dims, axis));
  if (pixel === null) return { action: "ignore" };
  if (state.tool === "erase-point") return { action: "erase-at", pixel };
  if (state.activeSegment === null) return { action: "needs-segment" };
  return {
    action: "add-point",
    kind: state.tool,
    voxel: pixelToVoxel(axis, state.indices[axis] ?? 0, pixel),
    pixel,
  };
}

export interface OverlaySlot {
  axis: AxisLetter;
  index: number;
  segment: number;
  rle: RleMask;
  score: number;
  /** True while a newer decode for the visible slice is still in flight. */
  stale: boolean;
}

/** Latest-wins holder for one viewer's server mask.
 *
 * Every visible mask byte comes from a server response stored here
 * verbatim; this class never constructs or edits mask contents. Older
 * responses arriving after a newer request started are dropped.
 */
export class MaskPresenter {
  private seq = 0;
  private slot: OverlaySlot | null = null;

  get overlay(): OverlaySlot | null {
    return this.slot;
  }

  /** Run one decode; resolves to the slot if this request still won. */
  async present(
    axis: AxisLetter, index: number, segment: number,
    fetcher: () => Promise<{ mask: RleMask; score: number }>,
  ): Promise<OverlaySlot | null> {
    const token = ++this.seq;
    if (this.slot) this.slot = { ...this.slot, stale: true };
    let response;
    try {
      response = await fetcher();
    } catch (err) {
      if (token === this.seq) this.slot = null; // cleared, not guessed at
      throw err;
    }
    if (token !== this.seq) return null; // a newer request took over
    this.slot = {
      axis, index, segment,
      rle: response.mask, score: response.score, stale: false,
    };
    return this.slot;
  }

  clear(): void {
    this.seq++;
    this.slot = null;
  }
}
