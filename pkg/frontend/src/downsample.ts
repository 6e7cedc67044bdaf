/**
 * Canvas-to-network preprocessing: box-average an inked grayscale canvas
 * down to the 28x28 grid the models expect.
 *
 * Deterministic and pure: a fully inked canvas maps to all ones, an empty
 * canvas to all zeros, and every output value stays inside [0, 1].
 */

export const GRID = 28;

/** Luminance in [0, 1] per canvas pixel from RGBA bytes (ink is drawn as
 * white on a black background, so the red channel carries the signal). */
export function rgbaToInk(rgba: Uint8ClampedArray | number[]): Float64Array {
  const n = rgba.length / 4;
  const ink = new Float64Array(n);
  for (let i = 0; i < n; i++) {
    ink[i] = rgba[i * 4] / 255;
  }
  return ink;
}

/** Box-average a width x height ink grid down to grid x grid values in
 * [0, 1], row-major. Width and height must be multiples of the grid. */
export function downsample(
  ink: Float64Array | number[],
  width: number,
  height: number,
  grid: number = GRID,
): number[] {
  if (width % grid !== 0 || height % grid !== 0) {
    throw new Error(`canvas ${width}x${height} is not a multiple of ${grid}`);
  }
  if (ink.length !== width * height) {
    throw new Error(`expected ${width * height} ink values, got ${ink.length}`);
  }
  const bx = width / grid;
  const by = height / grid;
  const out = new Array<number>(grid * grid);
  for (let gy = 0; gy < grid; gy++) {
    for (let gx = 0; gx < grid; gx++) {
      let sum = 0;
      for (let y = gy * by; y < (gy + 1) * by; y++) {
        for (let x = gx * bx; x < (gx + 1) * bx; x++) {
          sum += ink[y * width + x];
        }
      }
      const mean = sum / (bx * by);
      out[gy * grid + gx] = Math.min(1, Math.max(0, mean));
    }
  }
  return out;
}

/** Guard run before every request: exactly grid*grid finite numbers in
 * [0, 1]. Returns the array it validated so call sites stay terse. */
export function assertPixelVector(pixels: number[], grid: number = GRID): number[] {
  if (!Array.isArray(pixels) || pixels.length !== grid * grid) {
    throw new Error(`pixel vector must have ${grid * grid} entries`);
  }
  for (const v of pixels) {
    if (typeof v !== "number" || !Number.isFinite(v) || v < 0 || v > 1) {
      throw new Error(`pixel value out of range: ${v}`);
    }
  }
  return pixels;
}
