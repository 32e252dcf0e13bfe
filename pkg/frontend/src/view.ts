/**
 * Canvas geometry and layer drawing. The pixel grid maps to canvas space
 * through a single zoom factor; both directions stay exact inverses to
 * within half a pixel at any zoom.
 */

import { PromptGlyph, ViewState } from "./machine.js";

export interface CanvasMapping {
  zoom: number; // canvas units per image pixel
}

/** Center of pixel (row, col) in canvas coordinates. */
export function pixelToCanvas(
  m: CanvasMapping,
  row: number,
  col: number
): [number, number] {
  return [(col + 0.5) * m.zoom, (row + 0.5) * m.zoom];
}

/** Pixel under a canvas point. */
export function canvasToPixel(
  m: CanvasMapping,
  x: number,
  y: number
): [number, number] {
  return [Math.floor(y / m.zoom), Math.floor(x / m.zoom)];
}

export function drawImageLayer(
  ctx: CanvasRenderingContext2D,
  values: Float32Array,
  height: number,
  width: number,
  zoom: number
): void {
  const img = ctx.createImageData(width, height);
  for (let i = 0; i < height * width; i++) {
    const v = Math.round(values[i] * 255);
    img.data[4 * i] = v;
    img.data[4 * i + 1] = v;
    img.data[4 * i + 2] = v;
    img.data[4 * i + 3] = 255;
  }
  putScaled(ctx, img, width, height, zoom);
}

export function drawMaskOverlay(
  ctx: CanvasRenderingContext2D,
  mask: Uint8Array,
  height: number,
  width: number,
  zoom: number,
  alpha: number
): void {
  const img = ctx.createImageData(width, height);
  for (let i = 0; i < height * width; i++) {
    if (mask[i]) {
      img.data[4 * i] = 70;
      img.data[4 * i + 1] = 160;
      img.data[4 * i + 2] = 255;
      img.data[4 * i + 3] = Math.round(alpha * 255);
    }
  }
  putScaled(ctx, img, width, height, zoom);
}

function putScaled(
  ctx: CanvasRenderingContext2D,
  img: ImageData,
  width: number,
  height: number,
  zoom: number
): void {
  const off = new OffscreenCanvas(width, height);
  const octx = off.getContext("2d")!;
  octx.putImageData(img, 0, 0);
  ctx.imageSmoothingEnabled = false;
  ctx.drawImage(off, 0, 0, width * zoom, height * zoom);
}

export function drawGlyphs(
  ctx: CanvasRenderingContext2D,
  glyphs: PromptGlyph[],
  zoom: number
): void {
  for (const g of glyphs) {
    const [x, y] = pixelToCanvas({ zoom }, g.row, g.col);
    ctx.beginPath();
    ctx.arc(x, y, Math.max(3, zoom * 0.45), 0, 2 * Math.PI);
    ctx.fillStyle = g.label === 1 ? "#27c93f" : "#ff5f57";
    ctx.fill();
    ctx.lineWidth = 1.5;
    ctx.strokeStyle = "#ffffff";
    ctx.stroke();
  }
}

export function drawSuggestionMarker(
  ctx: CanvasRenderingContext2D,
  view: ViewState,
  zoom: number,
  pulse: number
): void {
  if (view.status.kind !== "awaiting_label" || view.suggestion === null) return;
  const [row, col] = view.suggestion.q;
  const [x, y] = pixelToCanvas({ zoom }, row, col);
  const radius = Math.max(6, zoom) * (1.0 + 0.25 * Math.sin(pulse));
  ctx.beginPath();
  ctx.arc(x, y, radius, 0, 2 * Math.PI);
  ctx.lineWidth = 2.5;
  ctx.strokeStyle = "#ffd100";
  ctx.stroke();
  ctx.beginPath();
  ctx.arc(x, y, 2, 0, 2 * Math.PI);
  ctx.fillStyle = "#ffd100";
  ctx.fill();
}

export function drawIouTimeline(
  ctx: CanvasRenderingContext2D,
  series: number[],
  width: number,
  height: number
): void {
  ctx.clearRect(0, 0, width, height);
  if (series.length === 0) return;
  ctx.beginPath();
  ctx.strokeStyle = "#27c93f";
  ctx.lineWidth = 2;
  series.forEach((v, i) => {
    const x = series.length === 1 ? width / 2 : (i / (series.length - 1)) * width;
    const y = height - v * height;
    if (i === 0) ctx.moveTo(x, y);
    else ctx.lineTo(x, y);
  });
  ctx.stroke();
}
