/**
 * Wire protocol for the motion streaming service.
 *
 * JSON envelopes; binary pose/audio payloads are base64-encoded
 * little-endian float32. Every client message carries a session-monotonic
 * integer `seq`; `start_session` must be sent first. Server `frames_out`
 * ranges are contiguous and gap-free.
 */

export type CharacterId = "A" | "B";

// ---------------------------------------------------------------- client -> server

export interface StartSession {
  type: "start_session";
  seq: number;
  fps?: number;
  gamma?: number;
  alpha?: number;
  stride?: number;
  seed?: number;
  skeleton_hash?: string;
}

export interface AudioChunk {
  type: "audio_chunk";
  seq: number;
  character: CharacterId;
  /** base64 little-endian float32 mono PCM */
  pcm: string;
  sample_rate: number;
  timestamp?: number;
}

export interface TrajectoryControl {
  type: "trajectory_control";
  seq: number;
  character: CharacterId;
  /** ground-plane waypoints in meters, [x, z]; empty list clears the control */
  waypoints: [number, number][];
  alpha?: number;
}

export interface MaskControl {
  type: "mask_control";
  seq: number;
  masked: boolean;
}

export interface GuidanceControl {
  type: "guidance_control";
  seq: number;
  gamma: number;
}

export type ClientMessage =
  | StartSession
  | AudioChunk
  | TrajectoryControl
  | MaskControl
  | GuidanceControl;

// ---------------------------------------------------------------- server -> client

export interface SessionReady {
  type: "session_ready";
  skeleton: string;
  fps: number;
  stride: number;
  window: number;
  past: number;
}

export interface FramesOut {
  type: "frames_out";
  start: number;
  stop: number;
  /** per-character base64 f32 payload of [stop-start, pose_width] rows */
  poses: Record<CharacterId, string>;
  pose_width: number;
}

export interface Stats {
  type: "stats";
  step: number;
  latency_ms: { denoise_ms?: number; blend_ms?: number; total_ms: number };
}

export interface Stall {
  type: "stall";
  have_frames: number;
  need_frames: number;
}

export interface ServerError {
  type: "error";
  code: "protocol" | "generation" | "busy";
  message: string;
}

export type ServerMessage = SessionReady | FramesOut | Stats | Stall | ServerError;

const SERVER_TYPES = new Set(["session_ready", "frames_out", "stats", "stall", "error"]);

/** Parse and minimally validate one server envelope. Throws on malformed input. */
export function parseServerMessage(raw: string): ServerMessage {
  let obj: unknown;
  try {
    obj = JSON.parse(raw);
  } catch {
    throw new Error("server sent invalid JSON");
  }
  if (typeof obj !== "object" || obj === null || Array.isArray(obj)) {
    throw new Error("server message is not an object");
  }
  const msg = obj as Record<string, unknown>;
  if (typeof msg.type !== "string" || !SERVER_TYPES.has(msg.type)) {
    throw new Error(`unknown server message type: ${String(msg.type)}`);
  }
  if (msg.type === "frames_out") {
    const { start, stop, poses, pose_width } = msg as Partial<FramesOut>;
    if (
      typeof start !== "number" ||
      typeof stop !== "number" ||
      stop <= start ||
      typeof pose_width !== "number" ||
      typeof poses !== "object" ||
      poses === null
    ) {
      throw new Error("malformed frames_out message");
    }
  }
  return msg as unknown as ServerMessage;
}

// ---------------------------------------------------------------- binary payloads

function bytesToBase64(bytes: Uint8Array): string {
  if (typeof Buffer !== "undefined") {
    return Buffer.from(bytes.buffer, bytes.byteOffset, bytes.byteLength).toString("base64");
  }
  let bin = "";
  for (let i = 0; i < bytes.length; i++) bin += String.fromCharCode(bytes[i]!);
  return btoa(bin);
}

function base64ToBytes(b64: string): Uint8Array {
  if (typeof Buffer !== "undefined") {
    return new Uint8Array(Buffer.from(b64, "base64"));
  }
  const bin = atob(b64);
  const bytes = new Uint8Array(bin.length);
  for (let i = 0; i < bin.length; i++) bytes[i] = bin.charCodeAt(i);
  return bytes;
}

/** Encode float32 samples/rows as the protocol's base64 payload. */
export function encodeF32(data: Float32Array): string {
  return bytesToBase64(new Uint8Array(data.buffer, data.byteOffset, data.byteLength));
}

/** Decode a base64 payload back to float32 values. */
export function decodeF32(b64: string): Float32Array {
  const bytes = base64ToBytes(b64);
  if (bytes.byteLength % 4 !== 0) {
    throw new Error(`payload length ${bytes.byteLength} is not a multiple of 4`);
  }
  // copy so the view is aligned regardless of the source buffer's offset
  const out = new Float32Array(bytes.byteLength / 4);
  out.set(new Float32Array(bytes.buffer.slice(bytes.byteOffset, bytes.byteOffset + bytes.byteLength)));
  return out;
}

/** Split a frames_out payload for one character into per-frame rows. */
export function decodePoseRows(b64: string, poseWidth: number): Float32Array[] {
  const flat = decodeF32(b64);
  if (flat.length % poseWidth !== 0) {
    throw new Error(`payload of ${flat.length} floats does not divide into width-${poseWidth} rows`);
  }
  const rows: Float32Array[] = [];
  for (let i = 0; i < flat.length; i += poseWidth) {
    rows.push(flat.subarray(i, i + poseWidth));
  }
  return rows;
}
