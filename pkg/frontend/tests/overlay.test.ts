import { describe, expect, it } from "vitest";
import { decodeRle } from "../src/rle.js";
import { drawPoints, grayToRgba, renderOverlay } from "../src/overlay.js";
import type { Rgb } from "../src/overlay.js";

const RED: Rgb = [255, 0, 0];

function gray(rows: number, cols: number, value = 100): Uint8ClampedArray {
  const out = new Uint8ClampedArray(rows * cols * 4);
  for (let i = 0; i < rows * cols; i++) {
    out[i * 4] = value;
    out[i * 4 + 1] = value;
    out[i * 4 + 2] = value;
    out[i * 4 + 3] = 255;
  }
  return out;
}

describe("renderOverlay", () => {
  it("leaves the base untouched for an all-background mask", () => {
    const base = gray(4, 5);
    const mask = decodeRle({ shape: [4, 5], counts: [20] });
    const out = renderOverlay(base, mask, [4, 5], RED, 0.5);
    expect(Array.from(out)).toEqual(Array.from(base));
  });

  it("tints every pixel uniformly for a full mask", () => {
    const base = gray(3, 3);
    const mask = decodeRle({ shape: [3, 3], counts: [0, 9] });
    const out = renderOverlay(base, mask, [3, 3], RED, 0.5);
    const first = Array.from(out.slice(0, 4));
    for (let i = 0; i < 9; i++) {
      expect(Array.from(out.slice(i * 4, i * 4 + 4))).toEqual(first);
    }
    expect(out[0]).toBeGreaterThan(100); // red channel pulled up
    expect(out[1]).toBeLessThan(100);    // green pulled down
  });

  it("tints exactly the masked pixels and no others", () => {
    // a 2x2 square at rows 1-2, cols 2-3 of a 4x5 slice
    const rows = 4, cols = 5;
    const maskBits = new Uint8Array(rows * cols);
    for (const r of [1, 2]) for (const c of [2, 3]) maskBits[r * cols + c] = 1;
    const base = gray(rows, cols);
    const out = renderOverlay(base, maskBits, [rows, cols], RED, 0.5);
    for (let i = 0; i < rows * cols; i++) {
      const same = Array.from(out.slice(i * 4, i * 4 + 4)).join()
        === Array.from(base.slice(i * 4, i * 4 + 4)).join();
      expect(same).toBe(!maskBits[i]);
    }
  });

  it("does not mutate its input", () => {
    const base = gray(2, 2);
    const snapshot = Array.from(base);
    renderOverlay(base, new Uint8Array([1, 1, 1, 1]), [2, 2], RED, 1);
    expect(Array.from(base)).toEqual(snapshot);
  });

  it("is a no-op at opacity 0 and pure color at opacity 1", () => {
    const base = gray(1, 1);
    const mask = new Uint8Array([1]);
    const zero = renderOverlay(base, mask, [1, 1], RED, 0);
    expect(Array.from(zero)).toEqual(Array.from(base));
    const one = renderOverlay(base, mask, [1, 1], RED, 1);
    expect(Array.from(one.slice(0, 3))).toEqual([255, 0, 0]);
  });

  it("rejects mask/shape/buffer disagreements and bad opacity", () => {
    const base = gray(2, 2);
    expect(() => renderOverlay(base, new Uint8Array(3), [2, 2], RED, 0.5))
      .toThrow();
    expect(() => renderOverlay(base, new Uint8Array(4), [2, 3], RED, 0.5))
      .toThrow();
    expect(() => renderOverlay(base, new Uint8Array(4), [2, 2], RED, 1.5))
      .toThrow();
  });
});

describe("drawPoints", () => {
  it("draws include points as filled squares", () => {
    const img = gray(9, 9, 0);
    drawPoints(img, [9, 9], [{ row: 4, col: 4, kind: "include" }], RED, 2);
    // every pixel within Chebyshev radius 2 is painted
    for (let r = 2; r <= 6; r++) {
      for (let c = 2; c <= 6; c++) {
        expect(img[(r * 9 + c) * 4]).toBe(255);
      }
    }
    expect(img[(0 * 9 + 0) * 4]).toBe(0); // far corner untouched
  });

  it("draws exclude points as hollow rings", () => {
    const img = gray(9, 9, 0);
    drawPoints(img, [9, 9], [{ row: 4, col: 4, kind: "exclude" }], RED, 2);
    expect(img[(4 * 9 + 4) * 4]).toBe(0);   // center left hollow
    expect(img[(2 * 9 + 4) * 4]).toBe(255); // rim painted
    expect(img[(4 * 9 + 6) * 4]).toBe(255);
    expect(img[(3 * 9 + 4) * 4]).toBe(0);   // interior ring not painted
  });

  it("clips glyphs at the image border", () => {
    const img = gray(5, 5, 0);
    drawPoints(img, [5, 5], [{ row: 0, col: 0, kind: "include" }], RED, 2);
    expect(img[0]).toBe(255);
    // nothing outside the buffer was touched (no throw, correct length)
    expect(img.length).toBe(100);
  });
});

describe("grayToRgba", () => {
  it("expands one gray byte to an opaque RGBA pixel", () => {
    const out = grayToRgba(new Uint8Array([0, 128, 255]));
    expect(Array.from(out)).toEqual([
      0, 0, 0, 255,
      128, 128, 128, 255,
      255, 255, 255, 255,
    ]);
  });
});
