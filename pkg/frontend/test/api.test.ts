import { afterEach, describe, expect, it, vi } from "vitest";

import * as api from "../src/api.js";
import { GRID } from "../src/downsample.js";

const PIXELS = new Array(GRID * GRID).fill(0.25);

function mockFetch(status: number, body: unknown) {
  const fn = vi.fn(async () => ({
    ok: status >= 200 && status < 300,
    status,
    json: async () => body,
  }));
  vi.stubGlobal("fetch", fn);
  return fn;
}

afterEach(() => {
  vi.unstubAllGlobals();
});

describe("recognize", () => {
  it("posts the pixel vector and returns the parsed response", async () => {
    const fn = mockFetch(200, { digit: 4, probabilities: new Array(10).fill(0.1) });
    const res = await api.recognize(PIXELS);
    expect(res.digit).toBe(4);
    const [url, init] = fn.mock.calls[0] as unknown as [string, RequestInit];
    expect(url).toBe("/api/recognize");
    expect(JSON.parse(init.body as string).pixels).toHaveLength(784);
  });

  it("never sends a malformed pixel array", async () => {
    const fn = mockFetch(200, {});
    await expect(api.recognize(new Array(10).fill(0))).rejects.toThrow(/784/);
    expect(fn).not.toHaveBeenCalled();
  });

  it("surfaces server-side errors", async () => {
    mockFetch(503, { error: "no classifier weights loaded" });
    await expect(api.recognize(PIXELS)).rejects.toThrow(/no classifier/);
  });
});

describe("decode", () => {
  it("rejects junk codes before any request", async () => {
    const fn = mockFetch(200, {});
    await expect(api.decode([])).rejects.toThrow(/non-empty/);
    await expect(api.decode([1, Number.NaN])).rejects.toThrow(/finite/);
    expect(fn).not.toHaveBeenCalled();
  });

  it("round-trips a valid code", async () => {
    mockFetch(200, { pixels: new Array(784).fill(0) });
    const res = await api.decode(new Array(30).fill(0.2));
    expect(res.pixels).toHaveLength(784);
  });
});

describe("health", () => {
  it("parses the model flags", async () => {
    mockFetch(200, {
      status: "ok",
      models: { classifier: true, autoencoder: false },
      input_size: 784,
      code_size: null,
    });
    const h = await api.health();
    expect(h.models.classifier).toBe(true);
    expect(h.models.autoencoder).toBe(false);
  });
});
