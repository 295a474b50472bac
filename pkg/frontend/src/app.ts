/** Single-page annotation app wiring the pure modules to the DOM.
 *
 * Three synchronized orthogonal viewers plus one enlarged active view.
 * Clicks become include/exclude points, every point placement triggers
 * a decode, and masks/labels/points are redrawn only from server
 * responses. At most one mask request per viewer is in flight;
 * latest-wins (see MaskPresenter).
 */

import { ApiError, Client } from "./api.js";
import type { Keyframe, SegmentRecord, SessionInfo } from "./api.js";
import type { AxisLetter, Dims } from "./coords.js";
import { AXES, sliceExtent, sliceShape, voxelToPixel } from "./coords.js";
import { decodeRle } from "./rle.js";
import { drawPoints, grayToRgba, renderOverlay } from "./overlay.js";
import type { PointGlyph, Rgb } from "./overlay.js";
import { timelineMarks } from "./timeline.js";
import type { Tool, ViewerState } from "./viewer.js";
import {
  MaskPresenter, initialViewerState, panBy, planClick, setActiveSegment,
  setSliceIndex, setTool, stepSlice, zoomAround,
} from "./viewer.js";

const INCLUDE_GLYPH_COLOR: Rgb = [80, 220, 100];
const EXCLUDE_GLYPH_COLOR: Rgb = [235, 80, 60];

interface ViewerDom {
  axis: AxisLetter;
  canvas: HTMLCanvasElement;
  label: HTMLElement;
}

export class App {
  private client: Client | null = null;
  private session: SessionInfo | null = null;
  private state: ViewerState | null = null;
  private segments: SegmentRecord[] = [];
  private keyframes: Keyframe[] = [];
  private presenters = new Map<AxisLetter, MaskPresenter>();
  private rasterCache = new Map<string, ImageBitmap>();
  private viewers: ViewerDom[] = [];

  constructor(private readonly root: HTMLElement, baseUrl?: string) {
    this.buildDom(baseUrl ?? `${location.protocol}//${location.host}`);
  }

  // -- DOM scaffolding -----------------------------------------------------

  private el<K extends keyof HTMLElementTagNameMap>(
    tag: K, cls: string, parent: HTMLElement, text = "",
  ): HTMLElementTagNameMap[K] {
    const node = document.createElement(tag);
    node.className = cls;
    if (text) node.textContent = text;
    parent.appendChild(node);
    return node;
  }

  private buildDom(defaultBase: string): void {
    this.root.innerHTML = "";
    const header = this.el("header", "topbar", this.root);
    const baseInput = this.el("input", "base-url", header);
    baseInput.value = defaultBase;
    const volumeInput = this.el("input", "volume-path", header);
    volumeInput.placeholder = "server-side volume path (.nrrd/.tiff/.raw)";
    const openBtn = this.el("button", "open", header, "open volume");
    const embedBtn = this.el("button", "embed", header, "compute embeddings");
    embedBtn.disabled = true;
    const progress = this.el("span", "embed-progress", header);

    const main = this.el("main", "layout", this.root);
    const grid = this.el("section", "viewers", main);
    for (const axis of AXES) {
      const cell = this.el("figure", `viewer viewer-${axis}`, grid);
      const label = this.el("figcaption", "viewer-label", cell, axis);
      const canvas = this.el("canvas", "slice-canvas", cell);
      canvas.dataset["axis"] = axis;
      this.viewers.push({ axis, canvas, label });
      this.presenters.set(axis, new MaskPresenter());
      this.wireCanvas(axis, canvas);
    }

    const side = this.el("aside", "sidebar", main);
    const segHeader = this.el("div", "seg-header", side, "segments");
    const addSeg = this.el("button", "segment-add", segHeader, "+");
    this.el("ul", "segment-list", side);
    const tools = this.el("div", "tools", side);
    for (const tool of ["include", "exclude", "erase-point"] as Tool[]) {
      const b = this.el("button", `tool tool-${tool}`, tools, tool);
      b.onclick = () => {
        if (this.state) this.state = setTool(this.state, tool);
        this.refreshToolButtons();
      };
    }
    const opacity = this.el("input", "opacity", side);
    opacity.type = "range";
    opacity.min = "0";
    opacity.max = "1";
    opacity.step = "0.05";
    opacity.value = "0.5";
    opacity.oninput = () => {
      if (this.state) {
        this.state.overlayOpacity = Number(opacity.value);
        void this.redrawAll();
      }
    };
    this.el("div", "timeline", side);
    const actions = this.el("div", "actions", side);
    const acceptBtn = this.el("button", "accept", actions, "accept mask");
    const interpBtn = this.el("button", "interpolate", actions, "interpolate");
    const undoBtn = this.el("button", "undo", actions, "undo");
    const exportBtn = this.el("button", "export", actions, "export");
    this.el("div", "toasts", this.root);

    openBtn.onclick = () => void this.openSession(baseInput.value, volumeInput.value)
      .then(() => { embedBtn.disabled = false; })
      .catch((err) => this.toastError(err));
    embedBtn.onclick = () => void this.runEmbed(progress).catch((err) => this.toastError(err));
    addSeg.onclick = () => void this.createSegment().catch((err) => this.toastError(err));
    acceptBtn.onclick = () => void this.acceptActive().catch((err) => this.toastError(err));
    interpBtn.onclick = () => void this.interpolateActive().catch((err) => this.toastError(err));
    undoBtn.onclick = () => void this.undoLast().catch((err) => this.toastError(err));
    exportBtn.onclick = () => {
      if (this.client && this.session) {
        location.href = this.client.exportUrl(this.session.session_id);
      }
    };
  }

  private wireCanvas(axis: AxisLetter, canvas: HTMLCanvasElement): void {
    canvas.onclick = (ev) => {
      const rect = canvas.getBoundingClientRect();
      void this.handleClick(axis, ev.clientX - rect.left, ev.clientY - rect.top)
        .catch((err) => this.toastError(err));
    };
    canvas.onwheel = (ev) => {
      ev.preventDefault();
      if (!this.state || !this.session) return;
      if (ev.shiftKey) {
        const rect = canvas.getBoundingClientRect();
        this.state = zoomAround(this.state, axis, ev.deltaY < 0 ? 2 : 0.5,
          ev.clientX - rect.left, ev.clientY - rect.top);
      } else {
        this.state = stepSlice(this.state, this.session.dims, axis,
          ev.deltaY < 0 ? 1 : -1);
      }
      this.state.activeAxis = axis;
      void this.redraw(axis);
    };
    canvas.onpointermove = (ev) => {
      if (ev.buttons === 4 || (ev.buttons === 1 && ev.altKey)) {
        if (!this.state) return;
        this.state = panBy(this.state, axis, ev.movementX, ev.movementY);
        void this.redraw(axis);
      }
    };
  }

  // -- session / jobs --------------------------------------------------------

  async openSession(base: string, volumePath: string): Promise<void> {
    this.client = new Client(base.replace(/\/$/, ""));
    this.session = await this.client.createSession(volumePath);
    this.state = initialViewerState(this.session.dims);
    this.segments = this.session.segments ?? [];
    this.rasterCache.clear();
    for (const presenter of this.presenters.values()) presenter.clear();
    this.renderSegmentList();
    await this.redrawAll();
    this.toast(`session ${this.session.session_id} — dims ${this.session.dims.join("×")}`);
  }

  private async runEmbed(progress: HTMLElement): Promise<void> {
    if (!this.client || !this.session) throw new Error("open a volume first");
    const { job_id } = await this.client.startEmbed(this.session.session_id);
    await new Promise<void>((resolve, reject) => {
      const source = new EventSource(this.client!.jobEventsUrl(job_id));
      source.onmessage = (ev) => {
        const snap = JSON.parse(ev.data);
        progress.textContent = `${snap.done}/${snap.total} (${snap.phase})`;
        if (snap.terminal) {
          source.close();
          snap.phase === "complete"
            ? resolve()
            : reject(new Error(snap.error ?? `embed ${snap.phase}`));
        }
      };
      source.onerror = () => { source.close(); reject(new Error("event stream lost")); };
    });
    this.toast("embeddings ready — click to segment");
  }

  // -- segments ----------------------------------------------------------------

  private async createSegment(): Promise<void> {
    if (!this.client || !this.session) throw new Error("open a volume first");
    const name = prompt("segment name") ?? "";
    if (!name) return;
    const record = await this.client.createSegment(this.session.session_id, name);
    this.segments.push(record);
    if (this.state) this.state = setActiveSegment(this.state, record.id);
    this.renderSegmentList();
  }

  private renderSegmentList(): void {
    const list = this.root.querySelector(".segment-list");
    if (!list) return;
    list.innerHTML = "";
    for (const seg of this.segments) {
      const item = document.createElement("li");
      item.textContent = `${seg.id} ${seg.name}`;
      item.style.borderLeft = `1em solid rgb(${seg.color.join(",")})`;
      if (this.state?.activeSegment === seg.id) item.classList.add("active");
      item.onclick = () => {
        if (this.state) this.state = setActiveSegment(this.state, seg.id);
        this.renderSegmentList();
        void this.refreshTimeline().catch((err) => this.toastError(err));
      };
      (list as HTMLElement).appendChild(item);
    }
  }

  private refreshToolButtons(): void {
    for (const b of this.root.querySelectorAll(".tool")) {
      b.classList.toggle("active",
        b.classList.contains(`tool-${this.state?.tool}`));
    }
  }

  // -- interaction ------------------------------------------------------------

  private async handleClick(axis: AxisLetter, sx: number, sy: number): Promise<void> {
    if (!this.client || !this.session || !this.state) return;
    this.state.activeAxis = axis;
    const plan = planClick(this.state, this.session.dims, axis, sx, sy);
    if (plan.action === "ignore") return;
    if (plan.action === "needs-segment") {
      this.toast("create a segment first — nothing was posted");
      return;
    }
    const sid = this.session.session_id;
    const segment = this.state.activeSegment!;
    const index = this.state.indices[axis];
    if (plan.action === "erase-at") {
      const points = await this.client.listPoints(sid, segment, axis, index);
      const hit = points.find((p) => {
        const pos = voxelToPixel(axis, p.voxel);
        return Math.abs(pos.row - plan.pixel.row) <= 2
          && Math.abs(pos.col - plan.pixel.col) <= 2;
      });
      if (hit) {
        await this.client.removePointRaw(sid, hit.point_id);
        await this.decodeVisible(axis);
      }
      return;
    }
    await this.client.addPoint(sid, segment, axis, plan.kind, plan.voxel);
    await this.decodeVisible(axis);
  }

  /** Decode the visible slice's points into the overlay (latest wins). */
  private async decodeVisible(axis: AxisLetter): Promise<void> {
    if (!this.client || !this.session || !this.state) return;
    const segment = this.state.activeSegment;
    if (segment === null) return;
    const sid = this.session.session_id;
    const index = this.state.indices[axis];
    const presenter = this.presenters.get(axis)!;
    await this.redraw(axis); // shows the stale flag immediately
    try {
      const won = await presenter.present(axis, index, segment, async () => {
        const r = await this.client!.getMask(sid, segment, axis, index);
        return { mask: r.mask, score: r.score };
      });
      if (won) await this.redraw(axis);
    } catch (err) {
      await this.redraw(axis); // overlay cleared by the presenter
      throw err;
    }
    await this.refreshTimeline();
  }

  // -- timeline actions ---------------------------------------------------------

  private async acceptActive(): Promise<void> {
    if (!this.client || !this.session || !this.state) return;
    const axis = this.state.activeAxis;
    const segment = this.state.activeSegment;
    if (segment === null) { this.toast("no active segment"); return; }
    const out = await this.client.accept(this.session.session_id, segment,
      axis, this.state.indices[axis]);
    this.keyframes = out.keyframes;
    this.renderTimeline();
    await this.redraw(axis);
  }

  private async interpolateActive(): Promise<void> {
    if (!this.client || !this.session || !this.state) return;
    const segment = this.state.activeSegment;
    if (segment === null) { this.toast("no active segment"); return; }
    const out = await this.client.interpolate(this.session.session_id, segment,
      this.state.activeAxis);
    this.keyframes = out.keyframes;
    this.renderTimeline();
    this.toast(`interpolated ${out.written} slices`);
    await this.redrawAll();
  }

  private async undoLast(): Promise<void> {
    if (!this.client || !this.session) return;
    await this.client.undo(this.session.session_id);
    await this.refreshTimeline();
    await this.redrawAll();
  }

  private async refreshTimeline(): Promise<void> {
    if (!this.client || !this.session || !this.state) return;
    const segment = this.state.activeSegment;
    if (segment === null) { this.keyframes = []; this.renderTimeline(); return; }
    this.keyframes = await this.client.keyframes(this.session.session_id,
      segment, this.state.activeAxis);
    this.renderTimeline();
  }

  private renderTimeline(): void {
    const strip = this.root.querySelector(".timeline") as HTMLElement | null;
    if (!strip || !this.session || !this.state) return;
    const extent = sliceExtent(this.session.dims, this.state.activeAxis);
    strip.innerHTML = "";
    for (const mark of timelineMarks(this.keyframes, extent)) {
      const node = document.createElement("span");
      node.className = `mark mark-${mark.provenance}`;
      node.textContent = mark.glyph;
      node.style.left = `${(mark.at * 100).toFixed(1)}%`;
      node.title = `${mark.provenance} @ ${mark.index}`;
      node.onclick = () => {
        if (this.state && this.session) {
          this.state = setSliceIndex(this.state, this.session.dims,
            this.state.activeAxis, mark.index);
          void this.redraw(this.state.activeAxis);
        }
      };
      strip.appendChild(node);
    }
  }

  // -- rendering -----------------------------------------------------------------

  private async rasterBitmap(axis: AxisLetter, index: number): Promise<ImageBitmap> {
    const key = `${axis}:${index}:${this.state?.window.join("-")}`;
    const cached = this.rasterCache.get(key);
    if (cached) return cached;
    const url = this.client!.sliceUrl(this.session!.session_id, axis, index,
      this.state?.window);
    const blob = await (await fetch(url)).blob();
    const bitmap = await createImageBitmap(blob);
    this.rasterCache.set(key, bitmap);
    if (this.rasterCache.size > 128) {
      const oldest = this.rasterCache.keys().next().value;
      if (oldest) this.rasterCache.delete(oldest);
    }
    return bitmap;
  }

  private segmentColor(id: number): Rgb {
    const seg = this.segments.find((s) => s.id === id);
    return seg ? seg.color : [255, 210, 60];
  }

  private async redraw(axis: AxisLetter): Promise<void> {
    if (!this.client || !this.session || !this.state) return;
    const dims: Dims = this.session.dims;
    const sid = this.session.session_id;
    const index = this.state.indices[axis];
    const [rows, cols] = sliceShape(dims, axis);
    const viewer = this.viewers.find((v) => v.axis === axis);
    if (!viewer) return;
    viewer.label.textContent =
      `${axis} ${index + 1}/${sliceExtent(dims, axis)}`;

    const bitmap = await this.rasterBitmap(axis, index);
    const work = document.createElement("canvas");
    work.width = cols;
    work.height = rows;
    const wctx = work.getContext("2d")!;
    wctx.drawImage(bitmap, 0, 0);
    let buffer = new Uint8ClampedArray(
      wctx.getImageData(0, 0, cols, rows).data);

    const labels = await this.client.labelSlice(sid, axis, index);
    for (const entry of labels.segments) {
      buffer = renderOverlay(buffer, decodeRle(entry.mask), [rows, cols],
        this.segmentColor(entry.segment), this.state.overlayOpacity * 0.6);
    }

    const presenter = this.presenters.get(axis)!;
    const slot = presenter.overlay;
    const segment = this.state.activeSegment;
    if (slot && segment !== null && slot.segment === segment
        && slot.index === index) {
      buffer = renderOverlay(buffer, decodeRle(slot.rle), [rows, cols],
        this.segmentColor(segment), this.state.overlayOpacity);
    }

    if (segment !== null) {
      const points = await this.client.listPoints(sid, segment, axis, index);
      const glyphs: PointGlyph[] = points.map((p) => {
        const pos = voxelToPixel(axis, p.voxel);
        return { row: pos.row, col: pos.col, kind: p.kind };
      });
      drawPoints(buffer, [rows, cols],
        glyphs.filter((g) => g.kind === "include"), INCLUDE_GLYPH_COLOR);
      drawPoints(buffer, [rows, cols],
        glyphs.filter((g) => g.kind === "exclude"), EXCLUDE_GLYPH_COLOR);
    }

    wctx.putImageData(new ImageData(buffer, cols, rows), 0, 0);
    const canvas = viewer.canvas;
    const t = this.state.transforms[axis];
    canvas.width = Math.max(Math.round(cols * t.zoom), 1);
    canvas.height = Math.max(Math.round(rows * t.zoom), 1);
    const ctx = canvas.getContext("2d")!;
    ctx.imageSmoothingEnabled = false;
    ctx.clearRect(0, 0, canvas.width, canvas.height);
    ctx.setTransform(t.zoom, 0, 0, t.zoom, t.panX, t.panY);
    ctx.drawImage(work, 0, 0);
    ctx.setTransform(1, 0, 0, 1, 0, 0);
    if (slot?.stale && slot.index === index) {
      ctx.strokeStyle = "#e0a000";
      ctx.setLineDash([6, 4]);
      ctx.strokeRect(1, 1, canvas.width - 2, canvas.height - 2);
      ctx.setLineDash([]);
    }
  }

  private async redrawAll(): Promise<void> {
    for (const axis of AXES) await this.redraw(axis);
  }

  // -- toasts -------------------------------------------------------------------

  private toast(message: string, isError = false): void {
    const box = this.root.querySelector(".toasts") as HTMLElement | null;
    if (!box) return;
    const node = document.createElement("div");
    node.className = isError ? "toast toast-error" : "toast";
    node.textContent = message;
    box.appendChild(node);
    setTimeout(() => node.remove(), 6000);
  }

  private toastError(err: unknown): void {
    if (err instanceof ApiError) {
      this.toast(`${err.code}: ${err.message}`, true);
    } else {
      this.toast(String(err), true);
    }
  }
}
