/**
 * Canvas drawing: top-down trajectory editor (primary panel) and side-view
 * stick figures (secondary panel). Pure draw functions over SessionState —
 * no hidden mutable state beyond the canvas itself.
 */

import type { SessionState } from "./state.js";
import { rootPath } from "./state.js";
import { jointPositions } from "./skeleton.js";
import { type CanvasMapping, metersToPx, trackingRms, type WaypointEditor } from "./waypoints.js";

const CHAR_COLORS: Record<"A" | "B", string> = { A: "#2b7de9", B: "#e07b2b" };
/** Trail points drawn at most; longer histories are decimated for draw speed. */
const MAX_TRAIL_POINTS = 600;

function drawPolyline(
  ctx: CanvasRenderingContext2D,
  map: CanvasMapping,
  pts: [number, number][],
  style: string,
  dashed = false,
): void {
  if (pts.length < 2) return;
  ctx.save();
  ctx.strokeStyle = style;
  ctx.lineWidth = 2;
  if (dashed) ctx.setLineDash([6, 4]);
  ctx.beginPath();
  const step = Math.max(1, Math.floor(pts.length / MAX_TRAIL_POINTS));
  for (let i = 0; i < pts.length; i += step) {
    const [x, y] = metersToPx(map, pts[i]!);
    if (i === 0) ctx.moveTo(x, y);
    else ctx.lineTo(x, y);
  }
  ctx.stroke();
  ctx.restore();
}

export function drawTopDown(
  canvas: HTMLCanvasElement,
  state: SessionState,
  editors: Record<"A" | "B", WaypointEditor>,
  map: CanvasMapping,
): void {
  const ctx = canvas.getContext("2d")!;
  ctx.clearRect(0, 0, canvas.width, canvas.height);

  // meter grid
  ctx.strokeStyle = "#e4e4e4";
  ctx.lineWidth = 1;
  for (let gx = -10; gx <= 10; gx++) {
    const [px] = metersToPx(map, [gx, 0]);
    ctx.beginPath();
    ctx.moveTo(px, 0);
    ctx.lineTo(px, canvas.height);
    ctx.stroke();
    const [, pz] = metersToPx(map, [0, gx]);
    ctx.beginPath();
    ctx.moveTo(0, pz);
    ctx.lineTo(canvas.width, pz);
    ctx.stroke();
  }

  for (const c of ["A", "B"] as const) {
    const drawn = editors[c].waypoints;
    const generated = rootPath(state, c);
    drawPolyline(ctx, map, drawn, CHAR_COLORS[c], true);
    drawPolyline(ctx, map, generated, CHAR_COLORS[c]);
    for (const wp of drawn) {
      const [x, y] = metersToPx(map, wp);
      ctx.fillStyle = CHAR_COLORS[c];
      ctx.beginPath();
      ctx.arc(x, y, 5, 0, Math.PI * 2);
      ctx.fill();
    }
    if (drawn.length > 0 && generated.length > 0) {
      const rms = trackingRms(generated, drawn);
      ctx.fillStyle = CHAR_COLORS[c];
      ctx.font = "12px sans-serif";
      ctx.fillText(`${c} tracking RMS ${rms.toFixed(3)} m`, 8, c === "A" ? 16 : 32);
    }
  }

  if (state.stalled || state.gapDetected) {
    ctx.fillStyle = "#c62828";
    ctx.font = "bold 14px sans-serif";
    ctx.fillText(state.gapDetected ? "FRAME GAP — protocol violation" : "STALLED — waiting for audio", 8, canvas.height - 10);
  }
}

export function drawSkeletons(
  canvas: HTMLCanvasElement,
  state: SessionState,
  playhead: number,
): void {
  const ctx = canvas.getContext("2d")!;
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  if (!state.skeleton || state.frames.length === 0) return;
  const frame = state.frames[Math.min(playhead, state.frames.length - 1)]!;
  const scale = 120; // px per meter, side view (x right, y up)
  for (const c of ["A", "B"] as const) {
    const pos = jointPositions(state.skeleton, frame.poses[c], frame.rootWorld[c]);
    ctx.strokeStyle = CHAR_COLORS[c];
    ctx.lineWidth = 3;
    for (let j = 0; j < pos.length; j++) {
      const p = state.skeleton.parents[j]!;
      if (p < 0) continue;
      ctx.beginPath();
      ctx.moveTo(canvas.width / 2 + pos[p]![0] * scale, canvas.height - 20 - pos[p]![1] * scale);
      ctx.lineTo(canvas.width / 2 + pos[j]![0] * scale, canvas.height - 20 - pos[j]![1] * scale);
      ctx.stroke();
    }
  }
  if (state.lastLatencyMs !== null) {
    ctx.fillStyle = "#444";
    ctx.font = "12px sans-serif";
    ctx.fillText(`step latency ${state.lastLatencyMs.toFixed(1)} ms`, 8, 16);
  }
}
