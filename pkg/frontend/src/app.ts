/**
 * Review tool: browse the triage queue, inspect each slice with machine-mask
 * and discriminator-heatmap overlays, paint corrections, submit them back.
 *
 * All mask editing happens on a native-resolution bitmap; the canvas is only
 * a view of it.  Strokes are kept locally until the service acknowledges the
 * submission, so a rejected or failed request loses nothing.
 */

import { ApiClient, ApiError } from "./api.js";
import { colorizeHeatmap } from "./heatmap.js";
import { BACKGROUND, BrushMode, MaskBitmap, MaskEditor } from "./mask.js";
import { decodeGrayPng, encodeGrayPng } from "./png.js";
import { QueueStore } from "./store.js";
import { Viewport } from "./view.js";

export interface OverlayToggles {
  machineMask: boolean;
  heatmap: boolean;
}

export class ReviewApp {
  readonly store = new QueueStore();
  readonly viewport = new Viewport();
  editor: MaskEditor | null = null;
  overlays: OverlayToggles = { machineMask: true, heatmap: true };
  brushRadius = 6;
  brushMode: BrushMode = "paint";
  author = "reviewer";
  banner = "";
  needsConfirmUnchanged = false;

  private imageBytes: Uint8Array | null = null;
  private heatmapGray: { width: number; height: number; pixels: Uint8Array } | null = null;
  private strokePoints: { x: number; y: number }[] = [];

  constructor(private readonly client: ApiClient, root: HTMLElement | null = null) {
    if (root) this.mount(root);
  }

  // --- queue -----------------------------------------------------------------

  async loadQueue(): Promise<void> {
    try {
      const items = await this.client.queue();
      this.store.setItems(items);
      this.banner = "";
      if (this.store.current) await this.openCurrent();
    } catch (err) {
      // keep whatever is loaded; surface a retry banner instead
      this.banner = err instanceof ApiError ? `service unreachable - retry (${err.message})` : String(err);
    }
    this.renderAll();
  }

  async select(index: number): Promise<void> {
    if (this.store.select(index)) await this.openCurrent();
    this.renderAll();
  }

  async step(delta: 1 | -1): Promise<void> {
    const before = this.store.currentIndex;
    if (this.store.step(delta) && this.store.currentIndex !== before) {
      await this.openCurrent();
    }
    this.renderAll();
  }

  private async openCurrent(): Promise<void> {
    const item = this.store.current;
    if (!item) return;
    this.viewport.reset();
    this.needsConfirmUnchanged = false;
    const maskBytes = await this.client.sliceBytes(item.cube_id, item.slice_index, "mask");
    const mask = await decodeGrayPng(maskBytes);
    this.editor = new MaskEditor(new MaskBitmap(mask.width, mask.height, mask.pixels));
    try {
      this.imageBytes = await this.client.sliceBytes(item.cube_id, item.slice_index, "image");
      const heat = await this.client.sliceBytes(item.cube_id, item.slice_index, "heatmap");
      this.heatmapGray = await decodeGrayPng(heat);
    } catch {
      this.imageBytes = null;
      this.heatmapGray = null;
    }
  }

  // --- editing ------------------------------------------------------------------

  beginStroke(sx: number, sy: number): void {
    this.strokePoints = [this.viewport.screenToImage(sx, sy)];
  }

  extendStroke(sx: number, sy: number): void {
    if (this.strokePoints.length) {
      this.strokePoints.push(this.viewport.screenToImage(sx, sy));
    }
  }

  endStroke(): void {
    if (this.editor && this.strokePoints.length) {
      this.editor.stroke(this.strokePoints, this.brushRadius, this.brushMode);
      this.needsConfirmUnchanged = false;
    }
    this.strokePoints = [];
    this.renderCanvas();
  }

  undo(): void {
    this.editor?.undo();
    this.renderCanvas();
  }

  redo(): void {
    this.editor?.redo();
    this.renderCanvas();
  }

  toggleOverlay(which: keyof OverlayToggles): void {
    this.overlays[which] = !this.overlays[which];
    this.renderCanvas();
  }

  // --- submit -----------------------------------------------------------------------

  /**
   * Encode the edited mask and POST it.  Returns the correction id, or null
   * when confirmation is still needed / nothing is loaded.  On any failure
   * the local strokes are retained untouched.
   */
  async submit(confirmUnchanged = false): Promise<string | null> {
    const item = this.store.current;
    if (!item || !this.editor) return null;
    if (!this.editor.dirty && !confirmUnchanged) {
      this.needsConfirmUnchanged = true;
      this.renderAll();
      return null;
    }
    const mask = this.editor.mask;
    const png = await encodeGrayPng({ width: mask.width, height: mask.height, pixels: mask.data });
    try {
      const correctionId = await this.client.submitCorrection(
        item.cube_id, item.slice_index, this.author, png,
      );
      this.banner = "";
      this.needsConfirmUnchanged = false;
      this.store.markCorrected(item.cube_id, item.slice_index);
      const next = this.store.nextPendingIndex();
      if (next !== null) {
        this.store.select(next);
        await this.openCurrent();
      }
      this.renderAll();
      return correctionId;
    } catch (err) {
      this.banner = err instanceof ApiError
        ? `submission failed - strokes kept (${err.message})`
        : String(err);
      this.renderAll();
      return null;
    }
  }

  // --- DOM ---------------------------------------------------------------------------

  private elements: {
    list?: HTMLElement;
    empty?: HTMLElement;
    banner?: HTMLElement;
    canvas?: HTMLCanvasElement;
    status?: HTMLElement;
  } = {};

  mount(root: HTMLElement): void {
    root.innerHTML = `
      <div class="layout">
        <aside>
          <div id="banner" class="banner" hidden></div>
          <div id="empty" class="empty" hidden>nothing to review</div>
          <ul id="queue-list"></ul>
        </aside>
        <main>
          <div class="toolbar">
            <button id="btn-paint" title="paint">paint</button>
            <button id="btn-erase" title="erase">erase</button>
            <input id="brush-radius" type="range" min="1" max="40" value="6" title="brush radius">
            <button id="btn-undo">undo</button>
            <button id="btn-redo">redo</button>
            <label><input id="toggle-mask" type="checkbox" checked> mask</label>
            <label><input id="toggle-heatmap" type="checkbox" checked> heatmap</label>
            <button id="btn-submit">submit</button>
            <span id="status"></span>
          </div>
          <canvas id="editor-canvas" width="768" height="768"></canvas>
        </main>
      </div>`;
    this.elements = {
      list: root.querySelector("#queue-list") as HTMLElement,
      empty: root.querySelector("#empty") as HTMLElement,
      banner: root.querySelector("#banner") as HTMLElement,
      canvas: root.querySelector("#editor-canvas") as HTMLCanvasElement,
      status: root.querySelector("#status") as HTMLElement,
    };
    this.bindEvents(root);
    this.renderAll();
  }

  private bindEvents(root: HTMLElement): void {
    const canvas = this.elements.canvas!;
    let drawing = false;
    let panning = false;
    let last = { x: 0, y: 0 };

    canvas.addEventListener("pointerdown", (e) => {
      const rect = canvas.getBoundingClientRect();
      const sx = e.clientX - rect.left;
      const sy = e.clientY - rect.top;
      if (e.button === 1 || e.shiftKey) {
        panning = true;
        last = { x: sx, y: sy };
      } else {
        drawing = true;
        this.beginStroke(sx, sy);
      }
      canvas.setPointerCapture(e.pointerId);
    });
    canvas.addEventListener("pointermove", (e) => {
      const rect = canvas.getBoundingClientRect();
      const sx = e.clientX - rect.left;
      const sy = e.clientY - rect.top;
      if (panning) {
        this.viewport.panBy(sx - last.x, sy - last.y);
        last = { x: sx, y: sy };
        this.renderCanvas();
      } else if (drawing) {
        this.extendStroke(sx, sy);
        this.renderCanvas();
      }
    });
    canvas.addEventListener("pointerup", () => {
      if (drawing) this.endStroke();
      drawing = false;
      panning = false;
    });
    canvas.addEventListener("wheel", (e) => {
      e.preventDefault();
      const rect = canvas.getBoundingClientRect();
      this.viewport.zoomAt(e.clientX - rect.left, e.clientY - rect.top, e.deltaY < 0 ? 1.25 : 0.8);
      this.renderCanvas();
    });

    root.querySelector("#btn-paint")!.addEventListener("click", () => { this.brushMode = "paint"; });
    root.querySelector("#btn-erase")!.addEventListener("click", () => { this.brushMode = "erase"; });
    root.querySelector("#brush-radius")!.addEventListener("input", (e) => {
      this.brushRadius = Math.max(1, Number((e.target as HTMLInputElement).value));
    });
    root.querySelector("#btn-undo")!.addEventListener("click", () => this.undo());
    root.querySelector("#btn-redo")!.addEventListener("click", () => this.redo());
    root.querySelector("#toggle-mask")!.addEventListener("change", () => this.toggleOverlay("machineMask"));
    root.querySelector("#toggle-heatmap")!.addEventListener("change", () => this.toggleOverlay("heatmap"));
    root.querySelector("#btn-submit")!.addEventListener("click", () => {
      void this.submit(this.needsConfirmUnchanged);
    });
    document.addEventListener("keydown", (e) => {
      if (e.key === "ArrowRight" || e.key === "n") void this.step(1);
      if (e.key === "ArrowLeft" || e.key === "p") void this.step(-1);
      if (e.key === "z" && (e.ctrlKey || e.metaKey) && !e.shiftKey) this.undo();
      if (e.key === "z" && (e.ctrlKey || e.metaKey) && e.shiftKey) this.redo();
    });
  }

  renderAll(): void {
    this.renderQueue();
    this.renderCanvas();
  }

  private renderQueue(): void {
    const { list, empty, banner, status } = this.elements;
    if (banner) {
      banner.hidden = !this.banner;
      banner.textContent = this.banner;
    }
    if (empty) empty.hidden = this.store.items.length > 0;
    if (list) {
      list.innerHTML = "";
      this.store.items.forEach((item, i) => {
        const li = document.createElement("li");
        li.className = [
          "queue-item",
          item.status,
          i === this.store.currentIndex ? "active" : "",
          item.broken ? "broken" : "",
        ].join(" ").trim();
        li.textContent = `${item.cube_id} #${item.slice_index}`;
        const badge = document.createElement("span");
        badge.className = `badge badge-${item.status}`;
        badge.textContent = item.status;
        li.appendChild(badge);
        li.addEventListener("click", () => void this.select(i));
        list.appendChild(li);
      });
    }
    if (status) {
      const item = this.store.current;
      const dirty = this.editor?.dirty ? " (unsaved)" : "";
      status.textContent = this.needsConfirmUnchanged
        ? "mask unchanged - press submit again to confirm"
        : item
          ? `${item.cube_id} #${item.slice_index} d=${item.decision_value.toFixed(4)}${dirty}`
          : "";
    }
  }

  private renderCanvas(): void {
    const canvas = this.elements.canvas;
    if (!canvas || !this.editor) return;
    let ctx: CanvasRenderingContext2D | null = null;
    try {
      ctx = canvas.getContext("2d");
    } catch {
      return; // headless DOM without canvas support
    }
    if (!ctx) return;
    const mask = this.editor.mask;
    ctx.imageSmoothingEnabled = false;
    ctx.clearRect(0, 0, canvas.width, canvas.height);
    ctx.save();
    ctx.translate(this.viewport.panX, this.viewport.panY);
    ctx.scale(this.viewport.zoom, this.viewport.zoom);

    if (this.imageBytes) {
      void this.drawPngLayer(ctx, this.imageBytes, 1.0);
    }
    if (this.overlays.heatmap && this.heatmapGray) {
      const { width, height, pixels } = this.heatmapGray;
      const rgba = colorizeHeatmap(pixels);
      ctx.putImageData(new ImageData(rgba, width, height), 0, 0);
    }
    if (this.overlays.machineMask) {
      const rgba = new Uint8ClampedArray(mask.data.length * 4);
      for (let i = 0; i < mask.data.length; i++) {
        rgba[i * 4] = 64;
        rgba[i * 4 + 1] = 220;
        rgba[i * 4 + 2] = 120;
        rgba[i * 4 + 3] = mask.data[i] === BACKGROUND ? 0 : 140;
      }
      ctx.putImageData(new ImageData(rgba, mask.width, mask.height), 0, 0);
    }
    ctx.restore();
  }

  private async drawPngLayer(ctx: CanvasRenderingContext2D, bytes: Uint8Array, alpha: number): Promise<void> {
    try {
      const gray = await decodeGrayPng(bytes);
      const rgba = new Uint8ClampedArray(gray.pixels.length * 4);
      for (let i = 0; i < gray.pixels.length; i++) {
        rgba[i * 4] = rgba[i * 4 + 1] = rgba[i * 4 + 2] = gray.pixels[i];
        rgba[i * 4 + 3] = Math.round(alpha * 255);
      }
      ctx.putImageData(new ImageData(rgba, gray.width, gray.height), 0, 0);
    } catch {
      // non-grayscale or corrupt image layer: leave the canvas background
    }
  }
}

export function boot(): void {
  const root = document.getElementById("app");
  if (!root) return;
  const base = (window as { TCUPGAN_API_BASE?: string }).TCUPGAN_API_BASE ?? "";
  const app = new ReviewApp(new ApiClient(base), root);
  void app.loadQueue();
}

if (typeof document !== "undefined" && document.getElementById("app")) {
  boot();
}
