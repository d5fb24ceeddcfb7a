import { describe, expect, it } from "vitest";
import { decodeGrayPng, encodeGrayPng, fromBase64, toBase64 } from "../src/png.js";

// 24x24 grayscale PNG written by Pillow (uses Sub/Up/Paeth scanline filters)
const PIL_PNG_B64 =
  "iVBORw0KGgoAAAANSUhEUgAAABgAAAAYCAAAAADFHGIkAAABNklEQVR4nAXBiQkDQAwDMNu5hEL3n7WQtxJf9fRzZu0J07KsOwfvxDaLNyuZT2RGTO0rJ3X9kGPYKQoRTXEGNqa+95Tq5xe2vkW6znHV9kZeA94Vo/k6rW0Zjh5ne4SCCPLti8RmTVvLUTmHcTLCso1hL0faZukpwaE6oXIE7OGUQnUadbHjdbm2QNYw3WnGjHzP6sWzIXxvwFuKTStd3JpX9YLn6u2mx82rmt1pQRH17in9kVWN8ckPsx/xfdjfJOvcNSW7mjCu79khHwfsufJlBXJ3LNSE+Pzp2ISwUHMfkTkgvHSqq21TjbtXXFkxvc5n1jR9OJUx9fbIAznl18HtlDw8i2J7tI4GmyudYp+MY1xwcePRW53rHW9yrika+NjuhN5744mjyGygo1y56vWKupdB/AG/RwYQyzlEXAAAAABJRU5ErkJggg==";

function randomMask(width: number, height: number, seed: number): Uint8Array {
  // tiny deterministic PRNG (mulberry32)
  let state = seed >>> 0;
  const next = () => {
    state = (state + 0x6d2b79f5) >>> 0;
    let t = state;
    t = Math.imul(t ^ (t >>> 15), t | 1);
    t ^= t + Math.imul(t ^ (t >>> 7), t | 61);
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
  };
  const data = new Uint8Array(width * height);
  for (let i = 0; i < data.length; i++) data[i] = next() > 0.5 ? 255 : 0;
  return data;
}

describe("gray PNG codec", () => {
  it("round-trips random binary masks pixel-exactly", async () => {
    for (const [w, h, seed] of [[16, 16, 1], [64, 64, 2], [33, 17, 3]] as const) {
      const pixels = randomMask(w, h, seed);
      const encoded = await encodeGrayPng({ width: w, height: h, pixels });
      const decoded = await decodeGrayPng(encoded);
      expect(decoded.width).toBe(w);
      expect(decoded.height).toBe(h);
      expect(Array.from(decoded.pixels)).toEqual(Array.from(pixels));
    }
  });

  it("round-trips full 8-bit gradients", async () => {
    const pixels = new Uint8Array(256 * 4);
    for (let i = 0; i < pixels.length; i++) pixels[i] = i % 256;
    const decoded = await decodeGrayPng(await encodeGrayPng({ width: 256, height: 4, pixels }));
    expect(Array.from(decoded.pixels)).toEqual(Array.from(pixels));
  });

  it("decodes a Pillow-written PNG with scanline filters", async () => {
    const decoded = await decodeGrayPng(fromBase64(PIL_PNG_B64));
    expect(decoded.width).toBe(24);
    expect(decoded.height).toBe(24);
    // spot-check values frozen from the source array
    expect(decoded.pixels[0]).toBe(4);
    expect(decoded.pixels[1]).toBe(255);
    expect(decoded.pixels[24]).toBe(255);
    expect(decoded.pixels[24 * 24 - 1]).toBe(243);
    let sum = 0;
    for (const v of decoded.pixels) sum += v;
    expect(sum).toBe(74114); // frozen checksum of all pixels
  });

  it("re-encoding a decoded PNG preserves pixels", async () => {
    const original = await decodeGrayPng(fromBase64(PIL_PNG_B64));
    const recoded = await decodeGrayPng(await encodeGrayPng(original));
    expect(Array.from(recoded.pixels)).toEqual(Array.from(original.pixels));
  });

  it("rejects non-PNG bytes", async () => {
    await expect(decodeGrayPng(new Uint8Array([1, 2, 3, 4]))).rejects.toThrow(/not a PNG/);
  });

  it("base64 helpers round-trip", () => {
    const bytes = randomMask(7, 5, 9);
    expect(Array.from(fromBase64(toBase64(bytes)))).toEqual(Array.from(bytes));
  });
});
