/** Pure pixel-buffer compositing for mask overlays and point glyphs.
 *
 * Everything here operates on flat RGBA buffers (4 bytes per pixel,
 * row-major) so it runs and tests identically with or without a DOM;
 * the app shell wraps the result in ImageData.
 */

import type { SlicePixel } from "./coords.js";

export type Rgb = [number, number, number];

/** Alpha-blend `color` over every masked pixel of a copy of `base`.
 *
 * Unmasked pixels are byte-identical to the base, so the tinted region
 * is exactly the mask's foreground.
 */
export function renderOverlay(
  base: Uint8ClampedArray,
  mask: Uint8Array,
  shape: [number, number],
  color: Rgb,
  opacity: number,
): Uint8ClampedArray<ArrayBuffer> {
  const [rows, cols] = shape;
  const size = rows * cols;
  if (base.length !== size * 4) {
    throw new RangeError(`base holds ${base.length / 4} px, slice has ${size}`);
  }
  if (mask.length !== size) {
    throw new RangeError(`mask holds ${mask.length} px, slice has ${size}`);
  }
  if (!(opacity >= 0 && opacity <= 1)) {
    throw new RangeError(`opacity must be in [0, 1], got ${opacity}`);
  }
  const out = new Uint8ClampedArray(base);
  for (let i = 0; i < size; i++) {
    if (!mask[i]) continue;
    const o = i * 4;
    out[o] = (base[o] ?? 0) * (1 - opacity) + color[0] * opacity;
    out[o + 1] = (base[o + 1] ?? 0) * (1 - opacity) + color[1] * opacity;
    out[o + 2] = (base[o + 2] ?? 0) * (1 - opacity) + color[2] * opacity;
    out[o + 3] = 255;
  }
  return out;
}

export interface PointGlyph extends SlicePixel {
  kind: "include" | "exclude";
}

/** Stamp point glyphs in place: include = filled square dot, exclude =
 * hollow ring, so the two kinds stay distinguishable at any zoom. */
export function drawPoints(
  image: Uint8ClampedArray,
  shape: [number, number],
  points: readonly PointGlyph[],
  color: Rgb,
  radius = 2,
): void {
  const [rows, cols] = shape;
  const paint = (row: number, col: number) => {
    if (row < 0 || row >= rows || col < 0 || col >= cols) return;
    const o = (row * cols + col) * 4;
    image[o] = color[0];
    image[o + 1] = color[1];
    image[o + 2] = color[2];
    image[o + 3] = 255;
  };
  for (const p of points) {
    for (let dr = -radius; dr <= radius; dr++) {
      for (let dc = -radius; dc <= radius; dc++) {
        const onRim = Math.max(Math.abs(dr), Math.abs(dc)) === radius;
        if (p.kind === "include" || onRim) paint(p.row + dr, p.col + dc);
      }
    }
  }
}

/** Expand a grayscale raster into an opaque RGBA buffer. */
export function grayToRgba(gray: Uint8Array | Uint8ClampedArray): Uint8ClampedArray<ArrayBuffer> {
  const out = new Uint8ClampedArray(gray.length * 4);
  for (let i = 0; i < gray.length; i++) {
    const v = gray[i] ?? 0;
    out.set([v, v, v, 255], i * 4);
  }
  return out;
}
