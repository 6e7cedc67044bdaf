/** Typed client for the demo service JSON API. */

import { assertPixelVector } from "./downsample.js";

export interface RecognizeResponse {
  digit: number;
  probabilities: number[];
}

export interface EncodeResponse {
  code: number[];
  code_size: number;
  compression_ratio: number;
}

export interface DecodeResponse {
  pixels: number[];
}

export interface HealthResponse {
  status: string;
  models: { classifier: boolean; autoencoder: boolean };
  input_size: number;
  code_size: number | null;
}

async function post<T>(path: string, payload: unknown): Promise<T> {
  const resp = await fetch(path, {
    method: "POST",
    headers: { "Content-Type": "application/json" },
    body: JSON.stringify(payload),
  });
  const body = await resp.json();
  if (!resp.ok) {
    throw new Error(body.error ?? `request failed with ${resp.status}`);
  }
  return body as T;
}

export async function recognize(pixels: number[]): Promise<RecognizeResponse> {
  return post("/api/recognize", { pixels: assertPixelVector(pixels) });
}

export async function encode(pixels: number[]): Promise<EncodeResponse> {
  return post("/api/encode", { pixels: assertPixelVector(pixels) });
}

export async function decode(code: number[]): Promise<DecodeResponse> {
  if (!Array.isArray(code) || code.length === 0) {
    throw new Error("code must be a non-empty array");
  }
  if (code.some((v) => typeof v !== "number" || !Number.isFinite(v))) {
    throw new Error("code entries must be finite numbers");
  }
  return post("/api/decode", { code });
}

export async function health(): Promise<HealthResponse> {
  const resp = await fetch("/api/health");
  if (!resp.ok) {
    throw new Error(`health check failed with ${resp.status}`);
  }
  return (await resp.json()) as HealthResponse;
}
