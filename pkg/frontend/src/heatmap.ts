/**
 * Recolors the served grayscale heatmap (pixel = discriminator score * 255)
 * with a blue-to-red diverging scale: blue = high score (more real),
 * red = low score (poorly generalized).  Cells stay hard-edged; the caller
 * draws with image smoothing disabled.
 */

export interface Rgba {
  r: number;
  g: number;
  b: number;
  a: number;
}

const RED: Rgba = { r: 202, g: 33, b: 32, a: 255 };
const WHITE: Rgba = { r: 245, g: 245, b: 245, a: 255 };
const BLUE: Rgba = { r: 26, g: 77, b: 192, a: 255 };

function lerp(a: Rgba, b: Rgba, t: number): Rgba {
  return {
    r: Math.round(a.r + (b.r - a.r) * t),
    g: Math.round(a.g + (b.g - a.g) * t),
    b: Math.round(a.b + (b.b - a.b) * t),
    a: Math.round(a.a + (b.a - a.a) * t),
  };
}

/** score in [0, 1] -> diverging color, red (0) through white (0.5) to blue (1). */
export function scoreColor(score: number): Rgba {
  const t = Math.min(1, Math.max(0, score));
  return t < 0.5 ? lerp(RED, WHITE, t * 2) : lerp(WHITE, BLUE, (t - 0.5) * 2);
}

/** Gray heatmap pixels (0..255) -> RGBA buffer with the diverging scale. */
export function colorizeHeatmap(gray: Uint8Array, alpha = 160): Uint8ClampedArray<ArrayBuffer> {
  const out = new Uint8ClampedArray(gray.length * 4);
  for (let i = 0; i < gray.length; i++) {
    const c = scoreColor(gray[i] / 255);
    out[i * 4] = c.r;
    out[i * 4 + 1] = c.g;
    out[i * 4 + 2] = c.b;
    out[i * 4 + 3] = alpha;
  }
  return out;
}
