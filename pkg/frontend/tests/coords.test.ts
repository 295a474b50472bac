import { describe, expect, it } from "vitest";
import type { Dims, ViewTransform } from "../src/coords.js";
import {
  AXES, pixelToScreen, pixelToVoxel, screenToPixel, sliceExtent, sliceShape,
  voxelInside, voxelToPixel,
} from "../src/coords.js";

const DIMS: Dims = [7, 9, 11]; // nx, ny, nz
const IDENTITY: ViewTransform = { zoom: 1, panX: 0, panY: 0 };

describe("slice geometry", () => {
  it("maps axis to the documented slice shape", () => {
    expect(sliceShape(DIMS, "z")).toEqual([9, 7]);   // (ny, nx)
    expect(sliceShape(DIMS, "y")).toEqual([11, 7]);  // (nz, nx)
    expect(sliceShape(DIMS, "x")).toEqual([11, 9]);  // (nz, ny)
  });

  it("maps axis to the matching slice count", () => {
    expect(sliceExtent(DIMS, "x")).toBe(7);
    expect(sliceExtent(DIMS, "y")).toBe(9);
    expect(sliceExtent(DIMS, "z")).toBe(11);
  });
});

describe("screenToPixel", () => {
  it("is the identity at zoom 1 with no pan", () => {
    const p = screenToPixel(3, 7, IDENTITY, [20, 20]);
    expect(p).toEqual({ row: 7, col: 3 });
  });

  it("halves coordinates at zoom 2 (same pixel from doubled screen xy)", () => {
    const p = screenToPixel(6, 14, { zoom: 2, panX: 0, panY: 0 }, [20, 20]);
    expect(p).toEqual({ row: 7, col: 3 });
  });

  it("undoes pan before zoom", () => {
    const t: ViewTransform = { zoom: 4, panX: 10, panY: -2 };
    // screen x = col*zoom + panX → col = (x - panX)/zoom
    const p = screenToPixel(3 * 4 + 10, 7 * 4 - 2, t, [20, 20]);
    expect(p).toEqual({ row: 7, col: 3 });
  });

  it("floors to the pixel containing the click anywhere in its cell", () => {
    const t: ViewTransform = { zoom: 4, panX: 0, panY: 0 };
    for (const frac of [0, 1, 2, 3.999]) {
      const p = screenToPixel(3 * 4 + frac, 7 * 4 + frac, t, [20, 20]);
      expect(p).toEqual({ row: 7, col: 3 });
    }
  });

  it("returns null outside the canvas", () => {
    expect(screenToPixel(-1, 5, IDENTITY, [10, 10])).toBeNull();
    expect(screenToPixel(5, -0.01, IDENTITY, [10, 10])).toBeNull();
    expect(screenToPixel(10, 5, IDENTITY, [10, 10])).toBeNull();
    expect(screenToPixel(5, 10, IDENTITY, [10, 10])).toBeNull();
  });

  it("rejects non-positive zoom", () => {
    expect(() => screenToPixel(0, 0, { zoom: 0, panX: 0, panY: 0 }, [5, 5]))
      .toThrow(RangeError);
  });

  it("inverts pixelToScreen for every zoom/pan/pixel combination", () => {
    for (const zoom of [1, 2, 4]) {
      for (const pan of [0, -13, 57]) {
        const t: ViewTransform = { zoom, panX: pan, panY: -pan };
        for (const row of [0, 4, 19]) {
          for (const col of [0, 7, 19]) {
            const s = pixelToScreen({ row, col }, t);
            expect(screenToPixel(s.sx, s.sy, t, [20, 20])).toEqual({ row, col });
          }
        }
      }
    }
  });
});

describe("pixelToVoxel / voxelToPixel", () => {
  it("z slice: row is y, col is x", () => {
    expect(pixelToVoxel("z", 10, { row: 7, col: 3 })).toEqual([3, 7, 10]);
  });

  it("y slice: row is z, col is x", () => {
    expect(pixelToVoxel("y", 4, { row: 9, col: 2 })).toEqual([2, 4, 9]);
  });

  it("x slice: row is z, col is y", () => {
    expect(pixelToVoxel("x", 5, { row: 8, col: 6 })).toEqual([5, 6, 8]);
  });

  it("round-trips through voxelToPixel on every axis", () => {
    const voxel: [number, number, number] = [3, 5, 8];
    for (const axis of AXES) {
      const pos = voxelToPixel(axis, voxel);
      const idx = axis === "x" ? voxel[0] : axis === "y" ? voxel[1] : voxel[2];
      expect(pos.index).toBe(idx);
      expect(pixelToVoxel(axis, pos.index, { row: pos.row, col: pos.col }))
        .toEqual(voxel);
    }
  });

  it("round-trips 500 random voxels through screen space", () => {
    // deterministic LCG so failures reproduce
    let seed = 0x2025;
    const next = (n: number) => {
      seed = (seed * 1103515245 + 12345) & 0x7fffffff;
      return seed % n;
    };
    for (let trial = 0; trial < 500; trial++) {
      const voxel: [number, number, number] =
        [next(DIMS[0]), next(DIMS[1]), next(DIMS[2])];
      const axis = AXES[next(3)]!;
      const zoom = [1, 2, 4][next(3)]!;
      const t: ViewTransform = { zoom, panX: next(40) - 20, panY: next(40) - 20 };
      const pos = voxelToPixel(axis, voxel);
      const s = pixelToScreen({ row: pos.row, col: pos.col }, t);
      // click anywhere inside the zoomed cell, not only its corner
      const jx = next(Math.ceil(zoom));
      const jy = next(Math.ceil(zoom));
      const pixel = screenToPixel(s.sx + jx, s.sy + jy, t, sliceShape(DIMS, axis));
      expect(pixel).not.toBeNull();
      expect(pixelToVoxel(axis, pos.index, pixel!)).toEqual(voxel);
    }
  });
});

describe("voxelInside", () => {
  it("accepts corners and rejects out-of-range voxels", () => {
    expect(voxelInside(DIMS, [0, 0, 0])).toBe(true);
    expect(voxelInside(DIMS, [6, 8, 10])).toBe(true);
    expect(voxelInside(DIMS, [7, 0, 0])).toBe(false);
    expect(voxelInside(DIMS, [0, -1, 0])).toBe(false);
    expect(voxelInside(DIMS, [0, 0, 11])).toBe(false);
  });
});
