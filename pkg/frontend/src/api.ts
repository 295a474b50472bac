/** Typed client for the segmentation service's HTTP/JSON API.
 *
 * The fetch implementation is injectable so component tests can
 * intercept the network layer; every error becomes an ApiError carrying
 * the server's `code` verbatim for toasts.
 */

import type { AxisLetter, Dims, Voxel } from "./coords.js";
import type { RleMask } from "./rle.js";

export class ApiError extends Error {
  override name = "ApiError";

  constructor(
    public readonly code: string,
    message: string,
    public readonly status: number,
    public readonly details: Record<string, unknown> = {},
  ) {
    super(message);
  }
}

export interface SessionInfo {
  session_id: string;
  dims: Dims;
  spacing: [number, number, number];
  has_cache: boolean;
  generation?: number;
  segments?: SegmentRecord[];
}

export interface SegmentRecord {
  id: number;
  name: string;
  color: [number, number, number];
  tag: string;
  created: string;
}

export interface JobSnapshot {
  job_id: string;
  done: number;
  total: number;
  phase: "running" | "complete" | "cancelled" | "error";
  terminal: boolean;
  error?: string;
}

export interface PointRecord {
  point_id: string;
  kind: "include" | "exclude";
  voxel: Voxel;
  row: number;
  col: number;
}

export interface MaskResponse {
  segment: number;
  axis: AxisLetter;
  index: number;
  score: number;
  provenance: string;
  mask: RleMask;
}

export interface Keyframe {
  index: number;
  provenance: "decoded" | "interpolated" | "imported";
}

export interface EchoResponse {
  axis: AxisLetter;
  index: number;
  row: number;
  col: number;
  voxel: Voxel;
}

type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class Client {
  constructor(
    private readonly base: string,
    private readonly fetchImpl: FetchLike = (...args) => fetch(...args),
  ) {}

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    const init: RequestInit = { method };
    if (body !== undefined) {
      init.body = JSON.stringify(body);
      init.headers = { "content-type": "application/json" };
    }
    const resp = await this.fetchImpl(this.base + path, init);
    if (!resp.ok) {
      let code = "HTTPError";
      let message = `${method} ${path} failed with ${resp.status}`;
      let details: Record<string, unknown> = {};
      try {
        const payload = await resp.json();
        code = payload.code ?? code;
        message = payload.message ?? message;
        details = payload.details ?? details;
      } catch {
        // non-JSON error body; keep the generic message
      }
      throw new ApiError(code, message, resp.status, details);
    }
    return resp.json() as Promise<T>;
  }

  createSession(volumePath: string, cachePath?: string): Promise<SessionInfo> {
    return this.request("POST", "/sessions",
      { volume_path: volumePath, cache_path: cachePath ?? null });
  }

  getSession(sid: string): Promise<SessionInfo> {
    return this.request("GET", `/sessions/${sid}`);
  }

  startEmbed(sid: string, axes = "xyz"): Promise<{ job_id: string }> {
    return this.request("POST", `/sessions/${sid}/embed`, { axes });
  }

  jobStatus(jid: string): Promise<JobSnapshot> {
    return this.request("GET", `/jobs/${jid}`);
  }

  /** URL for an EventSource following the job's progress stream. */
  jobEventsUrl(jid: string): string {
    return `${this.base}/jobs/${jid}/events`;
  }

  createSegment(sid: string, name: string): Promise<SegmentRecord> {
    return this.request("POST", `/sessions/${sid}/segments`, { name });
  }

  listSegments(sid: string): Promise<SegmentRecord[]> {
    return this.request("GET", `/sessions/${sid}/segments`);
  }

  addPoint(
    sid: string, segment: number, axis: AxisLetter,
    kind: "include" | "exclude", voxel: Voxel,
  ): Promise<PointRecord & { segment: number; axis: AxisLetter; index: number }> {
    return this.request("POST", `/sessions/${sid}/points`,
      { segment, axis, kind, voxel });
  }

  listPoints(
    sid: string, segment: number, axis: AxisLetter, index: number,
  ): Promise<PointRecord[]> {
    return this.request("GET",
      `/sessions/${sid}/points?segment=${segment}&axis=${axis}&index=${index}`);
  }

  clearPoints(sid: string, segment: number, axis: AxisLetter, index: number,
  ): Promise<{ remaining: number }> {
    return this.request("POST", `/sessions/${sid}/points/clear`,
      { segment, axis, index });
  }

  removePointRaw(sid: string, pointId: string,
  ): Promise<{ removed: string; remaining: number }> {
    return this.request("DELETE", `/sessions/${sid}/points/${pointId}`);
  }

  getMask(
    sid: string, segment: number, axis: AxisLetter, index: number,
    signal?: AbortSignal,
  ): Promise<MaskResponse> {
    const path = `/sessions/${sid}/mask?segment=${segment}&axis=${axis}&index=${index}`;
    return this.requestWithSignal("GET", path, signal);
  }

  private async requestWithSignal<T>(
    method: string, path: string, signal?: AbortSignal,
  ): Promise<T> {
    const resp = await this.fetchImpl(this.base + path,
      signal ? { method, signal } : { method });
    if (!resp.ok) {
      const payload = await resp.json().catch(() => ({}));
      throw new ApiError(payload.code ?? "HTTPError",
        payload.message ?? `${method} ${path} failed`, resp.status,
        payload.details ?? {});
    }
    return resp.json() as Promise<T>;
  }

  accept(sid: string, segment: number, axis: AxisLetter, index: number,
  ): Promise<{ generation: number; keyframes: Keyframe[] }> {
    return this.request("POST", `/sessions/${sid}/accept`,
      { segment, axis, index });
  }

  interpolate(sid: string, segment: number, axis: AxisLetter,
    mode: "overwrite" | "preserve" = "overwrite",
  ): Promise<{ written: number; generation: number; keyframes: Keyframe[] }> {
    return this.request("POST", `/sessions/${sid}/interpolate`,
      { segment, axis, mode });
  }

  undo(sid: string): Promise<{ generation: number }> {
    return this.request("POST", `/sessions/${sid}/undo`);
  }

  keyframes(sid: string, segment: number, axis: AxisLetter): Promise<Keyframe[]> {
    return this.request("GET",
      `/sessions/${sid}/keyframes?segment=${segment}&axis=${axis}`);
  }

  labelSlice(sid: string, axis: AxisLetter, index: number,
  ): Promise<{ shape: [number, number]; segments: { segment: number; mask: RleMask }[] }> {
    return this.request("GET",
      `/sessions/${sid}/label_slice?axis=${axis}&index=${index}`);
  }

  /** PNG raster URL for an <img>/createImageBitmap fetch. */
  sliceUrl(sid: string, axis: AxisLetter, index: number,
    window?: [number, number]): string {
    let url = `${this.base}/sessions/${sid}/slice?axis=${axis}&index=${index}`;
    if (window) url += `&window_min=${window[0]}&window_max=${window[1]}`;
    return url;
  }

  exportUrl(sid: string, format: "nrrd" | "tiff" | "raw" = "nrrd"): string {
    return `${this.base}/sessions/${sid}/export?format=${format}`;
  }

  pointEcho(sid: string, body:
    | { axis: AxisLetter; voxel: Voxel }
    | { axis: AxisLetter; index: number; row: number; col: number },
  ): Promise<EchoResponse> {
    return this.request("POST", `/sessions/${sid}/debug/point_echo`, body);
  }
}
