/** Keyframe timeline model: a mirror of the server's registry.
 *
 * Marks are always rebuilt from a fresh server response after every
 * mutation — never inferred locally from masks — so the strip can't
 * drift from what interpolation will actually anchor on.
 */

import type { Client, Keyframe } from "./api.js";
import type { AxisLetter } from "./coords.js";

export type Provenance = Keyframe["provenance"];

/** Distinct glyph per provenance so anchors read differently from fills. */
export const GLYPHS: Record<Provenance, string> = {
  decoded: "●",      // ● explicit anchor
  interpolated: "○", // ○ filled in between anchors
  imported: "■",     // ■ came in with a loaded label map
};

export interface TimelineMark {
  index: number;
  provenance: Provenance;
  glyph: string;
  /** Position in [0, 1] along the strip for rendering. */
  at: number;
}

export function timelineMarks(keyframes: readonly Keyframe[], extent: number): TimelineMark[] {
  const span = Math.max(extent - 1, 1);
  return keyframes
    .slice()
    .sort((a, b) => a.index - b.index)
    .map((k) => ({
      index: k.index,
      provenance: k.provenance,
      glyph: GLYPHS[k.provenance],
      at: k.index / span,
    }));
}

/** Refetch the registry for (segment, axis); the only way marks update. */
export async function mirrorKeyframes(
  client: Client, sid: string, segment: number, axis: AxisLetter, extent: number,
): Promise<TimelineMark[]> {
  return timelineMarks(await client.keyframes(sid, segment, axis), extent);
}
