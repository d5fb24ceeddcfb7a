/** Queue state: ordered items as served (worst first) plus the cursor. */

import type { QueueItem } from "./api.js";

export class QueueStore {
  items: QueueItem[] = [];
  currentIndex = -1;

  setItems(items: QueueItem[]): void {
    this.items = items;
    this.currentIndex = items.length ? 0 : -1;
  }

  get current(): QueueItem | null {
    return this.currentIndex >= 0 ? this.items[this.currentIndex] : null;
  }

  get pendingCount(): number {
    return this.items.filter((it) => it.status === "pending").length;
  }

  select(index: number): QueueItem | null {
    if (index < 0 || index >= this.items.length) return null;
    this.currentIndex = index;
    return this.items[index];
  }

  /** Move one item forward/back; clamped, so nothing is ever skipped. */
  step(delta: 1 | -1): QueueItem | null {
    if (!this.items.length) return null;
    const next = Math.min(this.items.length - 1, Math.max(0, this.currentIndex + delta));
    this.currentIndex = next;
    return this.items[next];
  }

  /** First pending item after the cursor (wrapping), or null when done. */
  nextPendingIndex(): number | null {
    if (!this.items.length) return null;
    for (let offset = 1; offset <= this.items.length; offset++) {
      const i = (this.currentIndex + offset) % this.items.length;
      if (this.items[i].status === "pending") return i;
    }
    return null;
  }

  markCorrected(cubeId: string, sliceIndex: number): void {
    for (const item of this.items) {
      if (item.cube_id === cubeId && item.slice_index === sliceIndex) {
        item.status = "corrected";
      }
    }
  }
}
