/** Run-length mask codec matching the service's wire format.
 *
 * A mask is `{shape: [rows, cols], counts: [...]}`: row-major alternating
 * background/foreground run lengths, starting with background, so a
 * leading 0 means the slice begins with foreground. Counts sum to
 * rows * cols.
 */

export interface RleMask {
  shape: [number, number];
  counts: number[];
}

export class MalformedRle extends Error {
  override name = "MalformedRle";
}

function isCount(v: unknown): v is number {
  return typeof v === "number" && Number.isInteger(v) && v >= 0;
}

/** Decode to a flat row-major byte mask (1 foreground, 0 background).
 *
 * Throws MalformedRle on anything structurally wrong; callers surface
 * that as an error banner and clear the overlay rather than guessing.
 */
export function decodeRle(rle: RleMask): Uint8Array {
  if (!rle || !Array.isArray(rle.shape) || rle.shape.length !== 2) {
    throw new MalformedRle("mask shape must be [rows, cols]");
  }
  const [rows, cols] = rle.shape;
  if (!isCount(rows) || !isCount(cols)) {
    throw new MalformedRle(`mask shape [${rows}, ${cols}] is not valid`);
  }
  if (!Array.isArray(rle.counts) || !rle.counts.every(isCount)) {
    throw new MalformedRle("mask counts must be non-negative integers");
  }
  const size = rows * cols;
  const total = rle.counts.reduce((a, b) => a + b, 0);
  if (total !== size) {
    throw new MalformedRle(`mask counts cover ${total} px, slice has ${size}`);
  }
  const out = new Uint8Array(size);
  let at = 0;
  let value = 0;
  for (const run of rle.counts) {
    if (value === 1) out.fill(1, at, at + run);
    at += run;
    value ^= 1;
  }
  return out;
}

/** Number of foreground pixels without materializing the mask. */
export function foregroundCount(rle: RleMask): number {
  let sum = 0;
  for (let i = 1; i < rle.counts.length; i += 2) sum += rle.counts[i] ?? 0;
  return sum;
}
