/** Zoom/pan transform between screen (canvas) and image pixel coordinates. */

import type { ImagePoint } from "./mask.js";

export class Viewport {
  zoom = 1;
  panX = 0;
  panY = 0;

  screenToImage(sx: number, sy: number): ImagePoint {
    return { x: (sx - this.panX) / this.zoom, y: (sy - this.panY) / this.zoom };
  }

  imageToScreen(p: ImagePoint): { x: number; y: number } {
    return { x: p.x * this.zoom + this.panX, y: p.y * this.zoom + this.panY };
  }

  /** Zoom by a factor keeping the given screen point fixed. */
  zoomAt(sx: number, sy: number, factor: number): void {
    const anchor = this.screenToImage(sx, sy);
    this.zoom = Math.min(32, Math.max(0.125, this.zoom * factor));
    this.panX = sx - anchor.x * this.zoom;
    this.panY = sy - anchor.y * this.zoom;
  }

  panBy(dx: number, dy: number): void {
    this.panX += dx;
    this.panY += dy;
  }

  reset(): void {
    this.zoom = 1;
    this.panX = 0;
    this.panY = 0;
  }
}
