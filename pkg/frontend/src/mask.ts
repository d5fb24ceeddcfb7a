/**
 * Editable binary mask with brush strokes and an undo/redo history.
 *
 * Strokes are rasterized in native image coordinates, never screen
 * coordinates, so the painted pixels do not depend on zoom or pan.
 */

export type BrushMode = "paint" | "erase";

export interface ImagePoint {
  x: number;
  y: number;
}

export const FOREGROUND = 255;
export const BACKGROUND = 0;

export class MaskBitmap {
  readonly width: number;
  readonly height: number;
  readonly data: Uint8Array;

  constructor(width: number, height: number, data?: Uint8Array) {
    if (width < 1 || height < 1) throw new Error("mask must be at least 1x1");
    this.width = width;
    this.height = height;
    if (data) {
      if (data.length !== width * height) {
        throw new Error(`mask data length ${data.length} != ${width * height}`);
      }
      this.data = data;
    } else {
      this.data = new Uint8Array(width * height);
    }
  }

  clone(): MaskBitmap {
    return new MaskBitmap(this.width, this.height, this.data.slice());
  }

  get(x: number, y: number): number {
    return this.data[y * this.width + x];
  }

  equals(other: MaskBitmap): boolean {
    if (other.width !== this.width || other.height !== this.height) return false;
    for (let i = 0; i < this.data.length; i++) {
      if (this.data[i] !== other.data[i]) return false;
    }
    return true;
  }

  /** Count of pixels that differ from another mask. */
  diffCount(other: MaskBitmap): number {
    let n = 0;
    for (let i = 0; i < this.data.length; i++) {
      if (this.data[i] !== other.data[i]) n++;
    }
    return n;
  }

  /** Stamp a filled disk at an image-space point. */
  stamp(center: ImagePoint, radius: number, mode: BrushMode): void {
    const value = mode === "paint" ? FOREGROUND : BACKGROUND;
    const r = Math.max(1, Math.round(radius));
    const cx = Math.round(center.x);
    const cy = Math.round(center.y);
    const x0 = Math.max(0, cx - r);
    const x1 = Math.min(this.width - 1, cx + r);
    const y0 = Math.max(0, cy - r);
    const y1 = Math.min(this.height - 1, cy + r);
    for (let y = y0; y <= y1; y++) {
      for (let x = x0; x <= x1; x++) {
        const dx = x - cx;
        const dy = y - cy;
        if (dx * dx + dy * dy <= r * r) {
          this.data[y * this.width + x] = value;
        }
      }
    }
  }

  /** Rasterize a polyline stroke by stamping disks at <= 1px spacing. */
  applyStroke(points: ImagePoint[], radius: number, mode: BrushMode): void {
    if (points.length === 0) return;
    this.stamp(points[0], radius, mode);
    for (let i = 1; i < points.length; i++) {
      const a = points[i - 1];
      const b = points[i];
      const steps = Math.max(1, Math.ceil(Math.hypot(b.x - a.x, b.y - a.y)));
      for (let s = 1; s <= steps; s++) {
        const t = s / steps;
        this.stamp({ x: a.x + (b.x - a.x) * t, y: a.y + (b.y - a.y) * t }, radius, mode);
      }
    }
  }
}

/** Undo/redo wrapper around the mask being edited; one entry per stroke. */
export class MaskEditor {
  static readonly MIN_UNDO_DEPTH = 20;

  private baseline: MaskBitmap;
  private current: MaskBitmap;
  private undoStack: Uint8Array[] = [];
  private redoStack: Uint8Array[] = [];
  private readonly capacity: number;

  constructor(initial: MaskBitmap, capacity = 50) {
    if (capacity < MaskEditor.MIN_UNDO_DEPTH) {
      throw new Error(`undo capacity must be >= ${MaskEditor.MIN_UNDO_DEPTH}`);
    }
    this.capacity = capacity;
    this.baseline = initial.clone();
    this.current = initial.clone();
  }

  get mask(): MaskBitmap {
    return this.current;
  }

  get dirty(): boolean {
    return !this.current.equals(this.baseline);
  }

  get undoDepth(): number {
    return this.undoStack.length;
  }

  /** Replace the working mask (e.g. after loading a new queue item). */
  reset(mask: MaskBitmap): void {
    this.baseline = mask.clone();
    this.current = mask.clone();
    this.undoStack = [];
    this.redoStack = [];
  }

  stroke(points: ImagePoint[], radius: number, mode: BrushMode): void {
    if (radius < 1) throw new Error("brush radius must be >= 1");
    this.undoStack.push(this.current.data.slice());
    if (this.undoStack.length > this.capacity) this.undoStack.shift();
    this.redoStack = [];
    this.current.applyStroke(points, radius, mode);
  }

  undo(): boolean {
    const prev = this.undoStack.pop();
    if (!prev) return false;
    this.redoStack.push(this.current.data.slice());
    this.current = new MaskBitmap(this.current.width, this.current.height, prev);
    return true;
  }

  redo(): boolean {
    const next = this.redoStack.pop();
    if (!next) return false;
    this.undoStack.push(this.current.data.slice());
    this.current = new MaskBitmap(this.current.width, this.current.height, next);
    return true;
  }
}
