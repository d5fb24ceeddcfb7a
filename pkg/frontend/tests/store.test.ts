import { describe, expect, it } from "vitest";
import type { QueueItem } from "../src/api.js";
import { QueueStore } from "../src/store.js";

function item(i: number, status: "pending" | "corrected" = "pending"): QueueItem {
  return {
    cube_id: `c${i}`, slice_index: i, mean: 0.5, variance: 0.01, decision_value: i,
    image: "", machine_mask: "", heatmap: "", status, broken: false,
  };
}

describe("QueueStore", () => {
  it("starts at the worst item", () => {
    const store = new QueueStore();
    store.setItems([item(0), item(1)]);
    expect(store.currentIndex).toBe(0);
  });

  it("step visits every item in order without skipping", () => {
    const store = new QueueStore();
    store.setItems([item(0), item(1, "corrected"), item(2), item(3)]);
    const visited = [store.currentIndex];
    for (let i = 0; i < 3; i++) {
      store.step(1);
      visited.push(store.currentIndex);
    }
    expect(visited).toEqual([0, 1, 2, 3]);
    store.step(1); // clamped at the end
    expect(store.currentIndex).toBe(3);
    store.step(-1);
    expect(store.currentIndex).toBe(2);
  });

  it("nextPendingIndex wraps and skips corrected items", () => {
    const store = new QueueStore();
    store.setItems([item(0, "corrected"), item(1), item(2, "corrected"), item(3)]);
    store.select(1);
    expect(store.nextPendingIndex()).toBe(3);
    store.select(3);
    expect(store.nextPendingIndex()).toBe(1);
  });

  it("nextPendingIndex is null when everything is corrected", () => {
    const store = new QueueStore();
    store.setItems([item(0, "corrected"), item(1, "corrected")]);
    expect(store.nextPendingIndex()).toBeNull();
  });

  it("markCorrected flips status", () => {
    const store = new QueueStore();
    store.setItems([item(0), item(1)]);
    store.markCorrected("c1", 1);
    expect(store.items[1].status).toBe("corrected");
    expect(store.pendingCount).toBe(1);
  });
});
