/** Typed client for the review-loop HTTP API. */

import { fromBase64, toBase64 } from "./png.js";

export interface QueueItem {
  cube_id: string;
  slice_index: number;
  mean: number;
  variance: number;
  decision_value: number;
  image: string;
  machine_mask: string;
  heatmap: string;
  status: "pending" | "corrected";
  broken: boolean;
}

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class ApiError extends Error {
  constructor(message: string, readonly status?: number) {
    super(message);
  }
}

export class ApiClient {
  constructor(
    private readonly base: string,
    private readonly fetchFn: FetchLike = (url, init) => fetch(url, init),
  ) {}

  private async request(path: string, init?: RequestInit): Promise<Response> {
    let response: Response;
    try {
      response = await this.fetchFn(`${this.base}${path}`, init);
    } catch (err) {
      throw new ApiError(`service unreachable: ${String(err)}`);
    }
    if (!response.ok) {
      let detail = response.statusText;
      try {
        const body = await response.json();
        if (body && typeof body.error === "string") detail = body.error;
      } catch {
        // non-JSON error body; keep the status text
      }
      throw new ApiError(detail, response.status);
    }
    return response;
  }

  async health(): Promise<void> {
    await this.request("/api/health");
  }

  async queue(status?: "pending" | "corrected", limit?: number): Promise<QueueItem[]> {
    const params = new URLSearchParams();
    if (status) params.set("status", status);
    if (limit !== undefined) params.set("limit", String(limit));
    const suffix = params.size ? `?${params}` : "";
    const response = await this.request(`/api/queue${suffix}`);
    const body = await response.json();
    return body.items as QueueItem[];
  }

  sliceUrl(cubeId: string, sliceIndex: number, kind: "image" | "mask" | "heatmap"): string {
    return `${this.base}/api/slices/${cubeId}/${sliceIndex}/${kind}`;
  }

  async sliceBytes(cubeId: string, sliceIndex: number, kind: "image" | "mask" | "heatmap"): Promise<Uint8Array> {
    const response = await this.request(`/api/slices/${cubeId}/${sliceIndex}/${kind}`);
    return new Uint8Array(await response.arrayBuffer());
  }

  async submitCorrection(
    cubeId: string,
    sliceIndex: number,
    author: string,
    maskPng: Uint8Array,
  ): Promise<string> {
    const response = await this.request("/api/corrections", {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({
        cube_id: cubeId,
        slice_index: sliceIndex,
        author,
        mask_png_base64: toBase64(maskPng),
      }),
    });
    const body = await response.json();
    return body.correction_id as string;
  }
}

export { fromBase64, toBase64 };
