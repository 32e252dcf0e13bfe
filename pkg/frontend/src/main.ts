/**
 * Browser entry point: wires DOM events to the session machine and paints
 * the canvas layers. Left click = include, right click = exclude,
 * Enter = include the suggested point, Shift+Enter = exclude it,
 * M / H toggle the mask / heatmap overlays.
 */

import { HttpSessionApi } from "./api.js";
import { SessionMachine, ViewState } from "./machine.js";
import {
  canvasToPixel,
  drawGlyphs,
  drawImageLayer,
  drawIouTimeline,
  drawMaskOverlay,
  drawSuggestionMarker,
} from "./view.js";

const api = new HttpSessionApi("");
const machine = new SessionMachine(api);

const canvas = document.getElementById("scene") as HTMLCanvasElement;
const timeline = document.getElementById("timeline") as HTMLCanvasElement;
const banner = document.getElementById("banner") as HTMLDivElement;
const toast = document.getElementById("toast") as HTMLDivElement;
const statusEl = document.getElementById("status") as HTMLSpanElement;
const startBtn = document.getElementById("start") as HTMLButtonElement;
const stopBtn = document.getElementById("stop") as HTMLButtonElement;
const itemInput = document.getElementById("item") as HTMLInputElement;
const posteriorInput = document.getElementById("posterior") as HTMLInputElement;
const strategySel = document.getElementById("strategy") as HTMLSelectElement;
const modeSel = document.getElementById("mode") as HTMLSelectElement;

let zoom = 8;
let pulse = 0;
let imageValues: Float32Array | null = null;
let maskValues: Uint8Array | null = null;
let heatmap: HTMLImageElement | null = null;
let lastHeatmapVersion = -1;
let lastMaskDigest: string | null = null;

async function refreshImage(view: ViewState): Promise<void> {
  if (view.sessionId === null) return;
  const resp = await fetch(`/sessions/${view.sessionId}/image`);
  const data = await resp.json();
  imageValues = Float32Array.from(data.values);
}

async function refreshMask(view: ViewState): Promise<void> {
  if (view.sessionId === null) return;
  const resp = await fetch(`/sessions/${view.sessionId}/mask`);
  const data = await resp.json();
  maskValues = Uint8Array.from(data.values);
}

function refreshHeatmap(view: ViewState): void {
  if (view.sessionId === null) return;
  const img = new Image();
  img.src = `/sessions/${view.sessionId}/heatmap.png?v=${view.heatmapVersion}`;
  img.onload = () => {
    heatmap = img;
  };
}

function paint(view: ViewState): void {
  if (view.height === 0) return;
  canvas.width = view.width * zoom;
  canvas.height = view.height * zoom;
  const ctx = canvas.getContext("2d")!;
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  if (imageValues) drawImageLayer(ctx, imageValues, view.height, view.width, zoom);
  if (view.overlays.heatmap && heatmap) {
    ctx.globalAlpha = view.overlays.heatmapAlpha;
    ctx.imageSmoothingEnabled = false;
    ctx.drawImage(heatmap, 0, 0, canvas.width, canvas.height);
    ctx.globalAlpha = 1.0;
  }
  if (view.overlays.mask && maskValues) {
    drawMaskOverlay(
      ctx, maskValues, view.height, view.width, zoom, view.overlays.maskAlpha
    );
  }
  drawGlyphs(ctx, view.glyphs, zoom);
  drawSuggestionMarker(ctx, view, zoom, pulse);
  const tctx = timeline.getContext("2d")!;
  if (view.hasGt) drawIouTimeline(tctx, view.iouTimeline, timeline.width, timeline.height);
}

machine.subscribe((view) => {
  statusEl.textContent =
    view.status.kind === "stopped"
      ? `stopped: ${view.status.reason}`
      : view.status.kind;
  banner.textContent = view.stopBanner ?? "";
  banner.style.display = view.stopBanner ? "block" : "none";
  toast.textContent = view.toast ?? "";
  toast.style.display = view.toast ? "block" : "none";
  if (view.heatmapVersion !== lastHeatmapVersion) {
    lastHeatmapVersion = view.heatmapVersion;
    refreshHeatmap(view);
  }
  if (view.maskDigest !== lastMaskDigest) {
    lastMaskDigest = view.maskDigest;
    void refreshMask(view).then(() => paint(machine.view));
  }
  paint(view);
});

startBtn.addEventListener("click", async () => {
  await machine.start({
    strategy: strategySel.value,
    dataset_item_id: itemInput.value,
    posterior_id: posteriorInput.value || undefined,
    mode: modeSel.value as "simulated" | "human",
    seed: Math.floor(Math.random() * 1_000_000),
  });
  await refreshImage(machine.view);
  const sid = machine.view.sessionId;
  if (sid !== null) window.location.hash = `#/session/${sid}`;
  paint(machine.view);
});

stopBtn.addEventListener("click", () => void machine.stop());

canvas.addEventListener("click", (ev) => {
  const rect = canvas.getBoundingClientRect();
  const q = canvasToPixel({ zoom }, ev.clientX - rect.left, ev.clientY - rect.top);
  void machine.submitLabel(q, 1);
});

canvas.addEventListener("contextmenu", (ev) => {
  ev.preventDefault();
  const rect = canvas.getBoundingClientRect();
  const q = canvasToPixel({ zoom }, ev.clientX - rect.left, ev.clientY - rect.top);
  void machine.submitLabel(q, 0);
});

window.addEventListener("keydown", (ev) => {
  if (ev.key === "Enter") {
    void machine.labelSuggested(ev.shiftKey ? 0 : 1);
  } else if (ev.key === "m" || ev.key === "M") {
    machine.toggleOverlay("mask");
  } else if (ev.key === "h" || ev.key === "H") {
    machine.toggleOverlay("heatmap");
  }
});

setInterval(() => {
  pulse += 0.35;
  paint(machine.view);
}, 120);
