/** Mask overlay colors: low saliency maps to blue, high to yellow, with
 * opacity following saliency so quiet regions stay see-through. */

export interface Rgba {
  r: number;
  g: number;
  b: number;
  a: number;
}

export const OVERLAY_ALPHA = 0.55;

/** v in [0, 255] from the grayscale mask PNG. */
export function maskColor(v: number): Rgba {
  const t = Math.min(255, Math.max(0, v));
  return {
    r: t,
    g: t,
    b: 255 - t,
    a: Math.round(255 * OVERLAY_ALPHA * (0.25 + (0.75 * t) / 255)),
  };
}

/** Expand one-byte-per-pixel mask data into RGBA for a canvas ImageData. */
export function maskToRgba(gray: Uint8ClampedArray): Uint8ClampedArray {
  const out = new Uint8ClampedArray(gray.length * 4);
  for (let i = 0; i < gray.length; i++) {
    const c = maskColor(gray[i] ?? 0);
    out[i * 4] = c.r;
    out[i * 4 + 1] = c.g;
    out[i * 4 + 2] = c.b;
    out[i * 4 + 3] = c.a;
  }
  return out;
}
