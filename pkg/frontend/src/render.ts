/**
 * Canvas rendering: orthographic 3D token scatter with orbit controls,
 * the active trace slice drawn in its world plane underneath, decimated
 * probe trajectories, and the direction rose.
 *
 * Orthographic projection keeps the slice-quad mapping exactly affine, so
 * the heatmap can be drawn with a single setTransform + drawImage.
 */

import type { DirectionStats, FieldSlice } from "./api.js";
import { roseSegments } from "./table.js";
import type { ViewState } from "./state.js";
import { highlightedIds, sceneMessage } from "./state.js";

export interface Camera {
  yaw: number; // radians about world z
  pitch: number; // radians about the view x axis
  zoom: number; // screen px per world unit
}

export function createCamera(): Camera {
  return { yaw: 0.0, pitch: 0.0, zoom: 0 }; // zoom 0 = fit to canvas
}

export interface Projected {
  x: number;
  y: number;
  depth: number; // larger = nearer the viewer
}

const CENTER = 0.5; // cloud lives in the unit cube

/** Orthographic turntable projection of a world point to screen px. */
export function projectPoint(
  p: readonly number[],
  cam: Camera,
  width: number,
  height: number,
): Projected {
  const scale = cam.zoom > 0 ? cam.zoom : 0.8 * Math.min(width, height);
  const dx = p[0] - CENTER;
  const dy = p[1] - CENTER;
  const dz = p[2] - CENTER;
  const cy = Math.cos(cam.yaw);
  const sy = Math.sin(cam.yaw);
  const cp = Math.cos(cam.pitch);
  const sp = Math.sin(cam.pitch);
  // Rz(yaw) then Rx(pitch)
  const x1 = cy * dx - sy * dy;
  const y1 = sy * dx + cy * dy;
  const y2 = cp * y1 - sp * dz;
  const z2 = sp * y1 + cp * dz;
  return {
    x: width / 2 + x1 * scale,
    y: height / 2 - y2 * scale,
    depth: z2,
  };
}

export interface WorldQuad {
  origin: [number, number, number];
  uCorner: [number, number, number]; // origin + full u axis (image width)
  vCorner: [number, number, number]; // origin + full v axis (image height)
}

/**
 * World-space quad of a slice plane. The u axis is the slice payload's
 * fastest-varying dimension, matching its X-Dims header.
 */
export function slicePlane(
  axis: "x" | "y" | "z",
  index: number,
  dims: [number, number, number],
): WorldQuad {
  const [nx, ny, nz] = dims;
  if (axis === "z") {
    const z = (index + 0.5) / nz;
    return { origin: [0, 0, z], uCorner: [1, 0, z], vCorner: [0, 1, z] };
  }
  if (axis === "y") {
    const y = (index + 0.5) / ny;
    return { origin: [0, y, 0], uCorner: [1, y, 0], vCorner: [0, y, 1] };
  }
  const x = (index + 0.5) / nx;
  return { origin: [x, 0, 0], uCorner: [x, 1, 0], vCorner: [x, 0, 1] };
}

export type Affine = [number, number, number, number, number, number];

/**
 * Affine transform mapping image pixel space (W x H) onto the projected
 * quad, in setTransform(a, b, c, d, e, f) order.
 */
export function quadTransform(
  origin: Projected,
  uCorner: Projected,
  vCorner: Projected,
  imageW: number,
  imageH: number,
): Affine {
  return [
    (uCorner.x - origin.x) / imageW,
    (uCorner.y - origin.y) / imageW,
    (vCorner.x - origin.x) / imageH,
    (vCorner.y - origin.y) / imageH,
    origin.x,
    origin.y,
  ];
}

// ─── Colors ──────────────────────────────────────────────────────────────────

export const DATA_GREEN = "#3fb950";
export const DISCOVERED_RED = "#f0443b";
export const UNASSIGNED_GRAY = "#8b949e";

/** Three-stop heat ramp for trace values, t in [0, 1]. */
export function colorRamp(t: number): [number, number, number] {
  const u = Math.min(Math.max(t, 0), 1);
  if (u < 0.5) {
    const s = u * 2;
    return [Math.round(13 + s * (32 - 13)), Math.round(17 + s * (140 - 17)), Math.round(62 + s * (141 - 62))];
  }
  const s = (u - 0.5) * 2;
  return [Math.round(32 + s * (246 - 32)), Math.round(140 + s * (212 - 140)), Math.round(141 + s * (56 - 141))];
}

/** Distinct, stable color per cluster label (golden-angle hue walk). */
export function clusterColor(label: number): string {
  if (label <= 0) return UNASSIGNED_GRAY;
  const hue = (label * 137.50776405003785) % 360;
  return `hsl(${hue.toFixed(2)}, 68%, 55%)`;
}

/** The fill color a token renders with under the current state. */
export function tokenColor(state: ViewState, id: number): string {
  if (highlightedIds(state).has(id)) return DISCOVERED_RED;
  if (state.clusterColors && state.clusters) {
    const label = state.clusters.token_labels[String(id)] ?? 0;
    return clusterColor(label);
  }
  return DATA_GREEN;
}

/** RGBA bytes for a slice heatmap; transparent where the trace is 0. */
export function sliceRgba(
  slice: FieldSlice,
  maxValue: number,
): Uint8ClampedArray<ArrayBuffer> {
  const n = slice.width * slice.height;
  const out = new Uint8ClampedArray(n * 4);
  const denom = maxValue > 0 ? maxValue : 1;
  for (let i = 0; i < n; i++) {
    const v = slice.values[i];
    const [r, g, b] = colorRamp(v / denom);
    out[i * 4] = r;
    out[i * 4 + 1] = g;
    out[i * 4 + 2] = b;
    out[i * 4 + 3] = v > 0 ? 220 : 30;
  }
  return out;
}

// ─── Scene ───────────────────────────────────────────────────────────────────

export interface SceneOptions {
  slice: FieldSlice | null;
  camera: Camera;
  onHitTest?: (hits: { id: number; x: number; y: number }[]) => void;
}

const BG = "#0d1117";
const TOKEN_PX = 3.5;

/** Full scene pass; also reports projected token positions for hit-testing. */
export function drawScene(
  canvas: HTMLCanvasElement,
  state: ViewState,
  opts: SceneOptions,
): void {
  const ctx = canvas.getContext("2d");
  if (!ctx) return;
  const { width, height } = canvas;
  ctx.setTransform(1, 0, 0, 1, 0, 0);
  ctx.fillStyle = BG;
  ctx.fillRect(0, 0, width, height);

  const message = sceneMessage(state);
  if (message) {
    ctx.fillStyle = "#8b949e";
    ctx.font = "16px system-ui, sans-serif";
    ctx.textAlign = "center";
    ctx.fillText(message, width / 2, height / 2);
    opts.onHitTest?.([]);
    return;
  }

  const cam = opts.camera;
  if (opts.slice && state.meta) {
    drawSliceQuad(ctx, opts.slice, state, cam, width, height);
  }

  if (state.probe) drawTrajectories(ctx, state, cam, width, height);

  // painter's order: far tokens first
  const projected = state.tokens.map((t) => ({
    token: t,
    p: projectPoint(t.pos, cam, width, height),
  }));
  projected.sort((a, b) => a.p.depth - b.p.depth);
  const hits: { id: number; x: number; y: number }[] = [];
  for (const { token, p } of projected) {
    ctx.beginPath();
    ctx.arc(p.x, p.y, TOKEN_PX, 0, 2 * Math.PI);
    ctx.fillStyle = tokenColor(state, token.id);
    ctx.fill();
    hits.push({ id: token.id, x: p.x, y: p.y });
  }

  if (state.selected) {
    const p = projectPoint(state.selected.pos, cam, width, height);
    ctx.beginPath();
    ctx.arc(p.x, p.y, TOKEN_PX + 3.5, 0, 2 * Math.PI);
    ctx.strokeStyle = "#e3b341";
    ctx.lineWidth = 2;
    ctx.stroke();
  }
  opts.onHitTest?.(hits);
}

function drawSliceQuad(
  ctx: CanvasRenderingContext2D,
  slice: FieldSlice,
  state: ViewState,
  cam: Camera,
  width: number,
  height: number,
): void {
  const meta = state.meta;
  if (!meta) return;
  const quad = slicePlane(slice.axis as "x" | "y" | "z", slice.index, meta.dims);
  const rgba = sliceRgba(slice, meta.stats.max);
  const image = new ImageData(rgba, slice.width, slice.height);
  const off = new OffscreenCanvas(slice.width, slice.height);
  const offCtx = off.getContext("2d");
  if (!offCtx) return;
  offCtx.putImageData(image, 0, 0);

  const o = projectPoint(quad.origin, cam, width, height);
  const u = projectPoint(quad.uCorner, cam, width, height);
  const v = projectPoint(quad.vCorner, cam, width, height);
  const t = quadTransform(o, u, v, slice.width, slice.height);
  ctx.save();
  ctx.setTransform(...t);
  ctx.imageSmoothingEnabled = true;
  ctx.drawImage(off, 0, 0);
  ctx.restore();
}

function drawTrajectories(
  ctx: CanvasRenderingContext2D,
  state: ViewState,
  cam: Camera,
  width: number,
  height: number,
): void {
  const probe = state.probe;
  if (!probe) return;
  ctx.save();
  ctx.strokeStyle = "rgba(125, 211, 252, 0.22)";
  ctx.lineWidth = 1;
  for (const line of probe.trajectories) {
    ctx.beginPath();
    for (let i = 0; i < line.length; i++) {
      const p = projectPoint(line[i], cam, width, height);
      if (i === 0) ctx.moveTo(p.x, p.y);
      else ctx.lineTo(p.x, p.y);
    }
    ctx.stroke();
  }
  ctx.restore();
}

// ─── Direction rose ──────────────────────────────────────────────────────────

export function drawRose(canvas: HTMLCanvasElement, stats: DirectionStats | null): void {
  const ctx = canvas.getContext("2d");
  if (!ctx) return;
  const { width, height } = canvas;
  ctx.setTransform(1, 0, 0, 1, 0, 0);
  ctx.clearRect(0, 0, width, height);
  if (!stats) return;
  const cx0 = width / 2;
  const cy0 = height / 2;
  const rMax = Math.min(width, height) / 2 - 4;
  ctx.strokeStyle = "#30363d";
  ctx.beginPath();
  ctx.arc(cx0, cy0, rMax, 0, 2 * Math.PI);
  ctx.stroke();
  ctx.fillStyle = "rgba(125, 211, 252, 0.55)";
  for (const seg of roseSegments(stats)) {
    ctx.beginPath();
    ctx.moveTo(cx0, cy0);
    ctx.arc(cx0, cy0, seg.radius * rMax, -seg.endAngle, -seg.startAngle);
    ctx.closePath();
    ctx.fill();
  }
}

// ─── Orbit controls ──────────────────────────────────────────────────────────

const PITCH_LIMIT = Math.PI / 2 - 0.01;

/** Pointer-drag orbit + wheel zoom. Returns a detach function. */
export function attachOrbitControls(
  canvas: HTMLCanvasElement,
  cam: Camera,
  onChange: () => void,
): () => void {
  let dragging = false;
  let lastX = 0;
  let lastY = 0;

  const down = (ev: PointerEvent) => {
    dragging = true;
    lastX = ev.clientX;
    lastY = ev.clientY;
    canvas.setPointerCapture(ev.pointerId);
  };
  const move = (ev: PointerEvent) => {
    if (!dragging) return;
    cam.yaw += (ev.clientX - lastX) * 0.008;
    cam.pitch = Math.min(
      Math.max(cam.pitch + (ev.clientY - lastY) * 0.008, -PITCH_LIMIT),
      PITCH_LIMIT,
    );
    lastX = ev.clientX;
    lastY = ev.clientY;
    onChange();
  };
  const up = (ev: PointerEvent) => {
    dragging = false;
    canvas.releasePointerCapture(ev.pointerId);
  };
  const wheel = (ev: WheelEvent) => {
    ev.preventDefault();
    const base = cam.zoom > 0 ? cam.zoom : 0.8 * Math.min(canvas.width, canvas.height);
    cam.zoom = Math.min(Math.max(base * Math.exp(-ev.deltaY * 0.001), 40), 4000);
    onChange();
  };

  canvas.addEventListener("pointerdown", down);
  canvas.addEventListener("pointermove", move);
  canvas.addEventListener("pointerup", up);
  canvas.addEventListener("wheel", wheel, { passive: false });
  return () => {
    canvas.removeEventListener("pointerdown", down);
    canvas.removeEventListener("pointermove", move);
    canvas.removeEventListener("pointerup", up);
    canvas.removeEventListener("wheel", wheel);
  };
}
