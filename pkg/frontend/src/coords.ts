/** Coordinate conventions shared with the server.
 *
 * Volume dims are [nx, ny, nz]; a voxel is [x, y, z]. Slice rasters are
 * (rows, cols): Z-slices are (y, x), Y-slices (z, x), X-slices (z, y).
 * The canvas shows the raster scaled by `zoom` and shifted by `pan`, so
 * screen = pixel * zoom + pan, pixel = floor((screen - pan) / zoom).
 */

export type AxisLetter = "x" | "y" | "z";

export type Dims = [number, number, number];

export type Voxel = [number, number, number];

export interface SlicePixel {
  row: number;
  col: number;
}

export interface ViewTransform {
  zoom: number;
  panX: number;
  panY: number;
}

export const AXES: readonly AxisLetter[] = ["x", "y", "z"];

/** Raster (rows, cols) of a slice along `axis` in a volume of `dims`. */
export function sliceShape(dims: Dims, axis: AxisLetter): [number, number] {
  const [nx, ny, nz] = dims;
  switch (axis) {
    case "z": return [ny, nx];
    case "y": return [nz, nx];
    case "x": return [nz, ny];
  }
}

/** Number of slices along `axis`. */
export function sliceExtent(dims: Dims, axis: AxisLetter): number {
  return dims[AXES.indexOf(axis)] ?? 0;
}

/** Canvas coordinates back to a slice pixel; null when outside the raster. */
export function screenToPixel(
  sx: number, sy: number, t: ViewTransform, shape: [number, number],
): SlicePixel | null {
  if (t.zoom <= 0) throw new RangeError(`zoom must be positive, got ${t.zoom}`);
  const col = Math.floor((sx - t.panX) / t.zoom);
  const row = Math.floor((sy - t.panY) / t.zoom);
  const [rows, cols] = shape;
  if (row < 0 || row >= rows || col < 0 || col >= cols) return null;
  return { row, col };
}

/** Top-left canvas position of a slice pixel (e.g. for point glyphs). */
export function pixelToScreen(p: SlicePixel, t: ViewTransform): { sx: number; sy: number } {
  return { sx: p.col * t.zoom + t.panX, sy: p.row * t.zoom + t.panY };
}

/** Rebuild the voxel from an (axis, index, row, col) slice position. */
export function pixelToVoxel(
  axis: AxisLetter, index: number, p: SlicePixel,
): Voxel {
  switch (axis) {
    case "z": return [p.col, p.row, index];
    case "y": return [p.col, index, p.row];
    case "x": return [index, p.col, p.row];
  }
}

/** Project a voxel onto its slice along `axis`; inverse of pixelToVoxel. */
export function voxelToPixel(
  axis: AxisLetter, voxel: Voxel,
): { index: number; row: number; col: number } {
  const [x, y, z] = voxel;
  switch (axis) {
    case "z": return { index: z, row: y, col: x };
    case "y": return { index: y, row: z, col: x };
    case "x": return { index: x, row: z, col: y };
  }
}

/** True when the voxel lies inside the volume. */
export function voxelInside(dims: Dims, voxel: Voxel): boolean {
  return voxel.every((v, i) => Number.isInteger(v) && v >= 0 && v < (dims[i] ?? 0));
}
