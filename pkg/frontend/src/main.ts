/** Browser bootstrap: DOM panel, three.js renderer, pointer bindings. */

import { ConsoleApp, AppElements } from "./app";
import { ThreeRenderer } from "./scene";

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing #${id}`);
  return node as T;
}

const elements: AppElements = {
  phaseBadge: el("phase-badge"),
  verdictBanner: el("verdict-banner"),
  errorBanner: el("error-banner"),
  connBanner: el("conn-banner"),
  btnPreview: el<HTMLButtonElement>("btn-preview"),
  btnConfirm: el<HTMLButtonElement>("btn-confirm"),
  btnAbort: el<HTMLButtonElement>("btn-abort"),
  btnReset: el<HTMLButtonElement>("btn-reset"),
};

const canvas = el<HTMLCanvasElement>("view");
canvas.width = canvas.clientWidth;
canvas.height = canvas.clientHeight;

const params = new URLSearchParams(window.location.search);
const url =
  params.get("ws") ?? `ws://${window.location.hostname || "127.0.0.1"}:8765`;

const renderer = new ThreeRenderer(canvas);
const app = new ConsoleApp(url, elements, renderer);
app.connect();

// -- pointer interaction ----------------------------------------------------
// drag aims the active ray; keys 1/2 switch hands; the wheel retracts or
// extends the ray; the slider scrubs the preview ghost.

let dragging = false;
let yaw = 0.0;
let pitch = 1.2;

window.addEventListener("keydown", (ev) => {
  if (ev.key === "1") app.rays.active = "left";
  if (ev.key === "2") app.rays.active = "right";
  el("hand-badge").textContent = `ray: ${app.rays.active}`;
});

canvas.addEventListener("pointerdown", (ev) => {
  dragging = true;
  canvas.setPointerCapture(ev.pointerId);
});
canvas.addEventListener("pointerup", () => {
  dragging = false;
});
canvas.addEventListener("pointermove", (ev) => {
  if (!dragging) return;
  yaw += ev.movementX * 0.01;
  pitch = Math.min(1.55, Math.max(0.1, pitch + ev.movementY * 0.005));
  app.rays.drag(app.rays.active, yaw, pitch);
});
canvas.addEventListener("wheel", (ev) => {
  ev.preventDefault();
  app.rays.wheel(app.rays.active, ev.deltaY > 0 ? -1 : 1);
});

const scrubber = el<HTMLInputElement>("scrub");
scrubber.addEventListener("input", () => {
  renderer.scrubGhost(Number(scrubber.value) / 100);
});

// park the ray sources above the workspace
app.rays.setOrigin("left", [0.45, 0.1, 1.0]);
app.rays.setOrigin("right", [0.55, 0.15, 1.0]);
