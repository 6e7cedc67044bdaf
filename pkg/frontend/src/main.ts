/**
 * Drawing demo: sketch a digit with the mouse, then recognize it or push
 * it through the autoencoder, three panels side by side (canvas, code
 * strip, reconstruction).
 */

import * as api from "./api.js";
import { GRID, downsample, rgbaToInk } from "./downsample.js";

const CANVAS_SIZE = 280;
const STROKE_WIDTH = 18;

type Point = { x: number; y: number };

function element<T extends HTMLElement>(id: string): T {
  const el = document.getElementById(id);
  if (!el) throw new Error(`missing element #${id}`);
  return el as T;
}

const canvas = element<HTMLCanvasElement>("draw");
const ctx = canvas.getContext("2d", { willReadFrequently: true })!;
const codeCanvas = element<HTMLCanvasElement>("code");
const reconCanvas = element<HTMLCanvasElement>("recon");
const barsBox = element<HTMLDivElement>("bars");
const resultBox = element<HTMLDivElement>("result");
const statusBox = element<HTMLDivElement>("status");

const buttons = {
  recognize: element<HTMLButtonElement>("recognize"),
  encodeBtn: element<HTMLButtonElement>("encode"),
  decodeBtn: element<HTMLButtonElement>("decode"),
  clear: element<HTMLButtonElement>("clear"),
  undo: element<HTMLButtonElement>("undo"),
};

// Strokes are kept as point lists so undo can replay all but the last.
const strokes: Point[][] = [];
let drawing = false;
let lastCode: number[] | null = null;
let busy = false;

function blank(): void {
  ctx.fillStyle = "#000";
  ctx.fillRect(0, 0, CANVAS_SIZE, CANVAS_SIZE);
}

function repaint(): void {
  blank();
  ctx.strokeStyle = "#fff";
  ctx.lineWidth = STROKE_WIDTH;
  ctx.lineCap = "round";
  ctx.lineJoin = "round";
  for (const stroke of strokes) {
    if (stroke.length === 0) continue;
    ctx.beginPath();
    ctx.moveTo(stroke[0].x, stroke[0].y);
    for (const p of stroke.slice(1)) ctx.lineTo(p.x, p.y);
    ctx.stroke();
  }
}

function canvasPixels(): number[] {
  const data = ctx.getImageData(0, 0, CANVAS_SIZE, CANVAS_SIZE).data;
  return downsample(rgbaToInk(data), CANVAS_SIZE, CANVAS_SIZE);
}

function pointer(ev: MouseEvent): Point {
  const rect = canvas.getBoundingClientRect();
  return {
    x: ((ev.clientX - rect.left) / rect.width) * CANVAS_SIZE,
    y: ((ev.clientY - rect.top) / rect.height) * CANVAS_SIZE,
  };
}

canvas.addEventListener("mousedown", (ev) => {
  drawing = true;
  strokes.push([pointer(ev)]);
  repaint();
});
canvas.addEventListener("mousemove", (ev) => {
  if (!drawing) return;
  strokes[strokes.length - 1].push(pointer(ev));
  repaint();
});
for (const event of ["mouseup", "mouseleave"] as const) {
  canvas.addEventListener(event, () => {
    drawing = false;
  });
}

buttons.clear.addEventListener("click", () => {
  strokes.length = 0;
  lastCode = null;
  repaint();
  renderBars(null);
  renderCode(null);
  renderRecon(null);
  resultBox.textContent = "";
});

buttons.undo.addEventListener("click", () => {
  strokes.pop();
  repaint();
});

function renderBars(probs: number[] | null): void {
  barsBox.innerHTML = "";
  if (!probs) return;
  probs.forEach((p, digit) => {
    const row = document.createElement("div");
    row.className = "bar-row";
    const label = document.createElement("span");
    label.textContent = String(digit);
    const bar = document.createElement("div");
    bar.className = "bar";
    bar.style.width = `${Math.round(p * 100)}%`;
    bar.title = p.toFixed(4);
    row.append(label, bar);
    barsBox.append(row);
  });
}

function renderCode(code: number[] | null): void {
  const cctx = codeCanvas.getContext("2d")!;
  cctx.clearRect(0, 0, codeCanvas.width, codeCanvas.height);
  if (!code) return;
  const cell = codeCanvas.height / code.length;
  const lo = Math.min(...code);
  const hi = Math.max(...code);
  code.forEach((v, i) => {
    const t = hi > lo ? (v - lo) / (hi - lo) : 0.5;
    const shade = Math.round(t * 255);
    cctx.fillStyle = `rgb(${shade},${Math.round(shade * 0.6)},${255 - shade})`;
    cctx.fillRect(0, i * cell, codeCanvas.width, Math.ceil(cell));
  });
}

function renderRecon(pixels: number[] | null): void {
  const rctx = reconCanvas.getContext("2d")!;
  rctx.fillStyle = "#000";
  rctx.fillRect(0, 0, reconCanvas.width, reconCanvas.height);
  if (!pixels) return;
  const scale = reconCanvas.width / GRID;
  for (let y = 0; y < GRID; y++) {
    for (let x = 0; x < GRID; x++) {
      const v = Math.round(pixels[y * GRID + x] * 255);
      rctx.fillStyle = `rgb(${v},${v},${v})`;
      rctx.fillRect(x * scale, y * scale, scale, scale);
    }
  }
}

/** One in-flight request per action button. */
async function withBusy(fn: () => Promise<void>): Promise<void> {
  if (busy) return;
  busy = true;
  for (const b of Object.values(buttons)) b.disabled = true;
  try {
    await fn();
  } catch (err) {
    resultBox.textContent = `error: ${(err as Error).message}`;
  } finally {
    busy = false;
    for (const b of Object.values(buttons)) b.disabled = false;
    void refreshButtons();
  }
}

buttons.recognize.addEventListener("click", () =>
  withBusy(async () => {
    const res = await api.recognize(canvasPixels());
    resultBox.textContent = `recognized: ${res.digit}`;
    renderBars(res.probabilities);
  }),
);

buttons.encodeBtn.addEventListener("click", () =>
  withBusy(async () => {
    const res = await api.encode(canvasPixels());
    lastCode = res.code;
    renderCode(res.code);
    resultBox.textContent =
      `encoded to ${res.code_size} dims ` +
      `(compression ${res.compression_ratio.toFixed(3)})`;
  }),
);

buttons.decodeBtn.addEventListener("click", () =>
  withBusy(async () => {
    if (!lastCode) {
      resultBox.textContent = "encode first: decode replays the last code";
      return;
    }
    const res = await api.decode(lastCode);
    renderRecon(res.pixels);
    resultBox.textContent = "reconstruction from the code alone";
  }),
);

let modelsSeen = { classifier: false, autoencoder: false };

async function refreshButtons(): Promise<void> {
  buttons.recognize.disabled = !modelsSeen.classifier;
  buttons.encodeBtn.disabled = !modelsSeen.autoencoder;
  buttons.decodeBtn.disabled = !modelsSeen.autoencoder;
}

async function pollHealth(): Promise<void> {
  try {
    const h = await api.health();
    modelsSeen = h.models;
    const parts = [
      h.models.classifier ? "classifier ready" : "classifier missing",
      h.models.autoencoder
        ? `autoencoder ready (code ${h.code_size})`
        : "autoencoder missing",
    ];
    statusBox.textContent = parts.join(" | ");
    statusBox.className = "status ok";
  } catch {
    statusBox.textContent = "service unreachable";
    statusBox.className = "status bad";
    modelsSeen = { classifier: false, autoencoder: false };
  }
  await refreshButtons();
}

blank();
void pollHealth();
setInterval(() => void pollHealth(), 5000);
