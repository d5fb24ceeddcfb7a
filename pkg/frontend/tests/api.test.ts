import { describe, expect, it } from "vitest";
import { ApiClient, ApiError } from "../src/api.js";
import { decodeGrayPng } from "../src/png.js";
import { makeFakeService } from "./fake_service.js";

describe("ApiClient", () => {
  it("fetches and parses the queue", async () => {
    const service = await makeFakeService(3);
    const client = new ApiClient("http://svc", service.fetchFn);
    const items = await client.queue();
    expect(items).toHaveLength(3);
    expect(items[0].status).toBe("pending");
  });

  it("round-trips a correction byte-exactly through the service", async () => {
    const service = await makeFakeService(1);
    const client = new ApiClient("http://svc", service.fetchFn);
    const machine = await client.sliceBytes("cube0", 0, "mask");

    const id = await client.submitCorrection("cube0", 0, "t", machine);
    expect(id).toMatch(/^corr-/);

    const served = await client.sliceBytes("cube0", 0, "mask");
    expect(Array.from(served)).toEqual(Array.from(machine));
    const decoded = await decodeGrayPng(served);
    expect(decoded.width).toBe(32);
  });

  it("raises ApiError with the server's message on 4xx", async () => {
    const service = await makeFakeService(1);
    const client = new ApiClient("http://svc", service.fetchFn);
    await expect(client.submitCorrection("ghost", 9, "t", new Uint8Array([1])))
      .rejects.toThrowError(ApiError);
    await expect(client.sliceBytes("ghost", 9, "mask")).rejects.toThrow(/unknown slice/);
  });

  it("wraps network failures as 'service unreachable'", async () => {
    const service = await makeFakeService(1);
    service.unreachable = true;
    const client = new ApiClient("http://svc", service.fetchFn);
    await expect(client.queue()).rejects.toThrow(/unreachable/);
  });
});
