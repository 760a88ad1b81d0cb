/**
 * Session state as a pure reduction over the server message log.
 *
 * The frame buffer is ordered by frame index by construction: the protocol
 * guarantees contiguous, gap-free frames_out ranges, so the reducer appends in
 * arrival order and flags any gap loudly instead of reordering. Because the
 * reducer is pure, the full UI state is reconstructible from the message log.
 */

import {
  type CharacterId,
  type ServerMessage,
  decodePoseRows,
} from "./protocol.js";
import {
  type Skeleton,
  parseSkeleton,
  rootDisplacement,
} from "./skeleton.js";

export interface FrameRecord {
  index: number;
  poses: Record<CharacterId, Float32Array>;
  /** accumulated root world position per character, [x, y, z] */
  rootWorld: Record<CharacterId, [number, number, number]>;
}

export interface SessionState {
  phase: "connecting" | "ready" | "errored";
  skeleton: Skeleton | null;
  fps: number;
  stride: number;
  poseWidth: number;
  frames: FrameRecord[];
  /** next frame index the protocol owes us */
  nextIndex: number;
  /** set when a frames_out range skips indices — a protocol violation */
  gapDetected: boolean;
  /** audio underrun reported by the service */
  stalled: boolean;
  lastLatencyMs: number | null;
  lastError: string | null;
}

export function initialState(): SessionState {
  return {
    phase: "connecting",
    skeleton: null,
    fps: 30,
    stride: 15,
    poseWidth: 0,
    frames: [],
    nextIndex: 0,
    gapDetected: false,
    stalled: false,
    lastLatencyMs: null,
    lastError: null,
  };
}

export function reduce(state: SessionState, msg: ServerMessage): SessionState {
  switch (msg.type) {
    case "session_ready":
      return {
        ...state,
        phase: "ready",
        skeleton: parseSkeleton(msg.skeleton),
        fps: msg.fps,
        stride: msg.stride,
      };
    case "frames_out": {
      if (state.skeleton === null) {
        return { ...state, phase: "errored", lastError: "frames before session_ready" };
      }
      if (msg.start !== state.nextIndex) {
        // surfaced loudly but the stream stays decodable for inspection
        return { ...state, gapDetected: true, lastError: `frame gap: expected ${state.nextIndex}, got ${msg.start}` };
      }
      const skel = state.skeleton;
      const rows: Record<CharacterId, Float32Array[]> = {
        A: decodePoseRows(msg.poses.A, msg.pose_width),
        B: decodePoseRows(msg.poses.B, msg.pose_width),
      };
      const n = msg.stop - msg.start;
      if (rows.A.length !== n || rows.B.length !== n) {
        return { ...state, phase: "errored", lastError: "payload row count disagrees with frame range" };
      }
      const last = state.frames[state.frames.length - 1];
      const acc: Record<CharacterId, [number, number, number]> = {
        A: last ? [...last.rootWorld.A] : [0, 0, 0],
        B: last ? [...last.rootWorld.B] : [0, 0, 0],
      };
      const frames = state.frames.slice();
      for (let i = 0; i < n; i++) {
        for (const c of ["A", "B"] as const) {
          const d = rootDisplacement(skel, rows[c][i]!);
          acc[c] = [acc[c][0] + d[0], acc[c][1] + d[1], acc[c][2] + d[2]];
        }
        frames.push({
          index: msg.start + i,
          poses: { A: rows.A[i]!, B: rows.B[i]! },
          rootWorld: { A: [...acc.A], B: [...acc.B] },
        });
      }
      return {
        ...state,
        frames,
        nextIndex: msg.stop,
        poseWidth: msg.pose_width,
        stalled: false,
      };
    }
    case "stats":
      return { ...state, lastLatencyMs: msg.latency_ms.total_ms };
    case "stall":
      return { ...state, stalled: true };
    case "error":
      return { ...state, phase: "errored", lastError: `${msg.code}: ${msg.message}` };
  }
}

/** Replay a full message log into a state; the canonical recovery path. */
export function replay(log: ServerMessage[]): SessionState {
  return log.reduce(reduce, initialState());
}

/** Ground-plane root path [x, z] for one character, ordered by frame index. */
export function rootPath(state: SessionState, character: CharacterId): [number, number][] {
  return state.frames.map((f) => [f.rootWorld[character][0], f.rootWorld[character][2]]);
}
