/**
 * Top-down waypoint trajectory editor model and tracking-error overlay math.
 *
 * The canvas shows the ground plane in meters; clicks create waypoints, drags
 * move the nearest one. Edits are debounced to at most one outgoing
 * trajectory_control message per window (the service applies controls at step
 * boundaries anyway). Waypoints are stored and sent in meters exactly as
 * drawn — the pixel mapping is invertible and applied only at the canvas edge.
 */

import type { CharacterId, TrajectoryControl } from "./protocol.js";

export interface CanvasMapping {
  /** canvas pixel of the world origin */
  originPx: [number, number];
  pixelsPerMeter: number;
}

/** Canvas pixel -> ground-plane meters [x, z]. Canvas y grows downward. */
export function pxToMeters(m: CanvasMapping, px: [number, number]): [number, number] {
  return [
    (px[0] - m.originPx[0]) / m.pixelsPerMeter,
    (m.originPx[1] - px[1]) / m.pixelsPerMeter,
  ];
}

/** Ground-plane meters -> canvas pixel. Inverse of pxToMeters. */
export function metersToPx(m: CanvasMapping, pt: [number, number]): [number, number] {
  return [
    m.originPx[0] + pt[0] * m.pixelsPerMeter,
    m.originPx[1] - pt[1] * m.pixelsPerMeter,
  ];
}

export class WaypointEditor {
  readonly character: CharacterId;
  private points: [number, number][] = [];

  constructor(character: CharacterId) {
    this.character = character;
  }

  get waypoints(): [number, number][] {
    return this.points.map((p) => [p[0], p[1]]);
  }

  /** Append a waypoint at a ground-plane position (meters). */
  add(pt: [number, number]): void {
    this.points.push([pt[0], pt[1]]);
  }

  /**
   * Move the waypoint nearest to `pt` if within `hitRadius` meters; returns
   * whether anything moved. Used for drag interactions.
   */
  moveNearest(pt: [number, number], to: [number, number], hitRadius: number): boolean {
    let best = -1;
    let bestD = hitRadius;
    for (let i = 0; i < this.points.length; i++) {
      const d = Math.hypot(this.points[i]![0] - pt[0], this.points[i]![1] - pt[1]);
      if (d <= bestD) {
        best = i;
        bestD = d;
      }
    }
    if (best < 0) return false;
    this.points[best] = [to[0], to[1]];
    return true;
  }

  clear(): void {
    this.points = [];
  }

  /** Wire message for the current waypoint list; seq is assigned by the client. */
  toMessage(seq: number, alpha?: number): TrajectoryControl {
    const msg: TrajectoryControl = {
      type: "trajectory_control",
      seq,
      character: this.character,
      waypoints: this.waypoints,
    };
    if (alpha !== undefined) msg.alpha = alpha;
    return msg;
  }
}

/**
 * Trailing-edge debouncer: however many times `schedule` is called within one
 * interval, `fn` fires at most once per interval, with the latest call's
 * closure. Injectable clock/timers for testing.
 */
export class Debouncer {
  private readonly intervalMs: number;
  private readonly setTimer: (fn: () => void, ms: number) => unknown;
  private readonly now: () => number;
  private lastFire = -Infinity;
  private pending: (() => void) | null = null;
  private timerActive = false;

  constructor(
    intervalMs: number,
    setTimer: (fn: () => void, ms: number) => unknown = (fn, ms) => setTimeout(fn, ms),
    now: () => number = () => Date.now(),
  ) {
    this.intervalMs = intervalMs;
    this.setTimer = setTimer;
    this.now = now;
  }

  schedule(fn: () => void): void {
    const t = this.now();
    if (t - this.lastFire >= this.intervalMs && !this.timerActive) {
      this.lastFire = t;
      fn();
      return;
    }
    this.pending = fn;
    if (!this.timerActive) {
      this.timerActive = true;
      const wait = Math.max(0, this.lastFire + this.intervalMs - t);
      this.setTimer(() => {
        this.timerActive = false;
        const p = this.pending;
        this.pending = null;
        if (p) {
          this.lastFire = this.now();
          p();
        }
      }, wait);
    }
  }
}

// ---------------------------------------------------------------- tracking overlay

function pointSegmentDistance(
  p: [number, number],
  a: [number, number],
  b: [number, number],
): number {
  const vx = b[0] - a[0];
  const vz = b[1] - a[1];
  const len2 = vx * vx + vz * vz;
  let t = 0;
  if (len2 > 0) {
    t = ((p[0] - a[0]) * vx + (p[1] - a[1]) * vz) / len2;
    t = Math.min(1, Math.max(0, t));
  }
  return Math.hypot(p[0] - (a[0] + t * vx), p[1] - (a[1] + t * vz));
}

/**
 * RMS distance (meters) from each generated root position to the drawn
 * waypoint polyline — the number shown next to the tracking overlay.
 */
export function trackingRms(path: [number, number][], waypoints: [number, number][]): number {
  if (path.length === 0) throw new Error("empty root path");
  if (waypoints.length === 0) throw new Error("no waypoints drawn");
  let sum = 0;
  for (const p of path) {
    let best = Infinity;
    if (waypoints.length === 1) {
      best = Math.hypot(p[0] - waypoints[0]![0], p[1] - waypoints[0]![1]);
    } else {
      for (let i = 0; i + 1 < waypoints.length; i++) {
        best = Math.min(best, pointSegmentDistance(p, waypoints[i]!, waypoints[i + 1]!));
      }
    }
    sum += best * best;
  }
  return Math.sqrt(sum / path.length);
}
