"""Websocket streaming service: audio and steering controls in, motion
frames out.

Protocol (JSON envelopes; binary payloads base64-encoded):

Client -> server (every message carries a session-monotonic integer `seq`):

    {"type": "start_session", "seq": 0, "fps": 30, "gamma": 1.0,
     "alpha": 0.5, "stride": 15, "seed": 0, "skeleton_hash": "..."}
        Must be first. `skeleton_hash`, when present, is checked against the
        served model. Everything but `seq` is optional.
    {"type": "audio_chunk", "seq": n, "character": "A",
     "pcm": "<base64 little-endian float32 mono>", "sample_rate": 16000,
     "timestamp": 0.0}
    {"type": "trajectory_control", "seq": n, "character": "A",
     "waypoints": [[x, z], ...], "alpha": 0.9}
        Waypoints are ground-plane meters; empty list clears the control.
    {"type": "mask_control", "seq": n, "masked": true}
    {"type": "guidance_control", "seq": n, "gamma": 2.0}

Server -> client:

    {"type": "session_ready", "skeleton": "<skeleton text>", "fps": 30,
     "stride": 15, "window": 45, "past": 10}
    {"type": "frames_out", "start": 0, "stop": 15,
     "poses": {"A": "<base64 f32 rows>", "B": "..."}, "pose_width": 59}
        Ranges are contiguous and gap-free; rows are [stride, pose_width].
    {"type": "stats", "step": 3, "latency_ms": {"denoise_ms": ..,
     "blend_ms": .., "total_ms": ..}}
    {"type": "stall", "have_frames": 30, "need_frames": 45}
        Audio underrun: generation pauses instead of fabricating frames.
    {"type": "error", "code": "protocol|generation|busy", "message": "..."}

Controls apply at step boundaries only: each frames_out block reflects
exactly one control state. Generation runs at most MAX_PENDING_STEPS windows
ahead of the received audio and each block is awaited onto the socket before
the next step, so a slow client pauses generation instead of growing an
unbounded buffer.

Environment: DUOMOTION_CHECKPOINT (model path), DUOMOTION_TRAJECTORY_CHECKPOINT
(optional), DUOMOTION_PORT, DUOMOTION_MAX_SESSIONS.
"""
from __future__ import annotations

import asyncio
import base64
import json
import logging
import os
from dataclasses import dataclass, field

import numpy as np
from fastapi import FastAPI, WebSocket, WebSocketDisconnect

from .config import Config
from .runtime import ControlInput, GenerationSession
from .skeleton import format_skeleton
from .speech import AudioTrack, StubTokenizer, extract_speech_features
from .training import load_checkpoint, load_motion_model, load_trajectory_model

log = logging.getLogger("duomotion.service")

MAX_PENDING_STEPS = 4   # generation may run at most this many steps ahead of playback


class ProtocolError(Exception):
    def __init__(self, message: str, code: str = "protocol"):
        super().__init__(message)
        self.code = code


@dataclass
class _AudioState:
    """Raw sample accumulator that feeds stable feature frames to a session.

    Feature frames are only forwarded once the audio fully covers their
    analysis window, so re-extraction never changes an emitted frame."""

    sample_rate: int | None = None
    samples: list[np.ndarray] = field(default_factory=list)
    forwarded: int = 0

    def append(self, pcm: np.ndarray, sample_rate: int) -> None:
        if self.sample_rate is None:
            self.sample_rate = sample_rate
        elif sample_rate != self.sample_rate:
            raise ProtocolError("sample rate changed mid-session")
        self.samples.append(pcm)

    def track(self) -> AudioTrack | None:
        if not self.samples:
            return None
        return AudioTrack(np.concatenate(self.samples), self.sample_rate)


class Session:
    """One websocket's generation state; messages are processed strictly in
    arrival order so control application is race-free by construction."""

    def __init__(self, bundle: "ModelBundle"):
        self.bundle = bundle
        self.gen: GenerationSession | None = None
        self.fps = 30.0
        self.controls = ControlInput()
        self.audio = {"A": _AudioState(), "B": _AudioState()}
        self.tokenizer = StubTokenizer()
        self.last_seq: int | None = None
        self.step_count = 0
        self.stalled = False

    # -------------------------------------------------------- message intake

    def handle(self, msg: dict) -> dict | None:
        """Apply one client message; returns an immediate reply or None."""
        if not isinstance(msg, dict) or "type" not in msg:
            raise ProtocolError("messages must be objects with a 'type' field")
        seq = msg.get("seq")
        if not isinstance(seq, int):
            raise ProtocolError("missing integer 'seq'")
        if self.last_seq is not None and seq <= self.last_seq:
            raise ProtocolError(f"seq {seq} not greater than {self.last_seq}")
        self.last_seq = seq
        kind = msg["type"]
        if self.gen is None and kind != "start_session":
            raise ProtocolError("first message must be start_session")
        if kind == "start_session":
            return self._start(msg)
        if kind == "audio_chunk":
            self._audio(msg)
            return None
        if kind == "trajectory_control":
            self._trajectory(msg)
            return None
        if kind == "mask_control":
            self.controls.mask_partner = bool(msg.get("masked", False))
            return None
        if kind == "guidance_control":
            self.controls.gamma = float(msg["gamma"])
            return None
        raise ProtocolError(f"unknown message type {kind!r}")

    def _start(self, msg: dict) -> dict:
        if self.gen is not None:
            raise ProtocolError("session already started")
        b = self.bundle
        want = msg.get("skeleton_hash")
        if want is not None and want != b.skel.content_hash():
            raise ProtocolError(
                f"model serves skeleton {b.skel.content_hash()}, client wants {want}"
            )
        self.fps = float(msg.get("fps", b.fps))
        self.gen = GenerationSession(
            b.model,
            b.skel,
            b.sched,
            b.normalizer,
            fps=self.fps,
            stride=int(msg.get("stride", b.defaults.stride)),
            gamma=float(msg.get("gamma", b.defaults.gamma)),
            alpha=float(msg.get("alpha", b.defaults.alpha)),
            seed=int(msg.get("seed", 0)),
            trajectory_model=b.trajectory,
        )
        return {
            "type": "session_ready",
            "skeleton": format_skeleton(b.skel),
            "fps": self.fps,
            "stride": self.gen.stride,
            "window": self.gen.window,
            "past": self.gen.past,
        }

    def _audio(self, msg: dict) -> None:
        char = msg.get("character")
        if char not in ("A", "B"):
            raise ProtocolError("audio_chunk needs character 'A' or 'B'")
        try:
            pcm = np.frombuffer(base64.b64decode(msg["pcm"]), dtype="<f4").astype(np.float64)
        except (KeyError, ValueError) as exc:
            raise ProtocolError(f"bad pcm payload: {exc}") from None
        state = self.audio[char]
        state.append(pcm, int(msg.get("sample_rate", 16000)))
        self._forward_features(char)

    def _forward_features(self, char: str) -> None:
        state = self.audio[char]
        track = state.track()
        if track is None:
            return
        feats = extract_speech_features(track, self.tokenizer, self.fps)
        # hold back frames whose analysis window the audio doesn't cover yet
        margin = int(np.ceil(0.064 * self.fps)) + 1
        stable = max(len(feats.mel) - margin, 0)
        if stable > state.forwarded:
            self.gen.append_speech(char, feats.sliced(state.forwarded, stable))
            state.forwarded = stable
            self.stalled = False

    def _trajectory(self, msg: dict) -> None:
        char = msg.get("character")
        if char not in ("A", "B"):
            raise ProtocolError("trajectory_control needs character 'A' or 'B'")
        pts = msg.get("waypoints", [])
        if not isinstance(pts, list) or any(len(p) != 2 for p in pts):
            raise ProtocolError("waypoints must be [x, z] pairs")
        arr = np.asarray(pts, dtype=np.float64) if pts else None
        if char == "A":
            self.controls.waypoints_a = arr
        else:
            self.controls.waypoints_b = arr
        if msg.get("alpha") is not None:
            self.controls.alpha = float(msg["alpha"])

    # ----------------------------------------------------------- generation

    def has_work(self) -> bool:
        return self.gen is not None and (self.gen.speech_ready() or not self.stalled)

    def pending_messages(self) -> list[dict]:
        """Step while audio allows (bounded); returns frames/stats/stall."""
        out: list[dict] = []
        if self.gen is None:
            return out
        steps = 0
        while self.gen.speech_ready() and steps < MAX_PENDING_STEPS:
            start = self.gen.emitted
            frames = self.gen.session_step(self.controls)
            stats = self.gen.last_stats
            stop = self.gen.emitted
            poses = {
                c: base64.b64encode(np.ascontiguousarray(rows, dtype="<f4").tobytes()).decode()
                for c, rows in frames.items()
            }
            out.append(
                {
                    "type": "frames_out",
                    "start": start,
                    "stop": stop,
                    "poses": poses,
                    "pose_width": self.bundle.skel.pose_width,
                }
            )
            self.step_count += 1
            out.append({"type": "stats", "step": self.step_count, "latency_ms": stats})
            steps += 1
            self.stalled = False
        if not self.gen.speech_ready() and not self.stalled:
            have = min(self.audio["A"].forwarded, self.audio["B"].forwarded)
            need = self.gen.emitted + self.gen.future
            # suppress the notice right after session start, before any audio
            if self.step_count > 0 or have > 0:
                out.append({"type": "stall", "have_frames": have, "need_frames": need})
            self.stalled = True
        return out


@dataclass
class ModelBundle:
    model: object
    skel: object
    sched: object
    normalizer: object
    fps: float
    trajectory: tuple | None
    defaults: Config


def load_bundle(checkpoint_path: str, trajectory_path: str | None = None) -> ModelBundle:
    payload = load_checkpoint(checkpoint_path)
    if payload.get("kind") != "motion":
        raise ValueError(f"{checkpoint_path} is not a motion checkpoint")
    model, skel, sched, norm = load_motion_model(payload)
    trajectory = None
    if trajectory_path:
        trajectory = load_trajectory_model(load_checkpoint(trajectory_path))
    return ModelBundle(model, skel, sched, norm, payload["fps"], trajectory, Config())


def build_app(checkpoint_path: str | None = None, max_sessions: int | None = None) -> FastAPI:
    checkpoint_path = checkpoint_path or os.environ.get("DUOMOTION_CHECKPOINT")
    if not checkpoint_path:
        raise ValueError("no checkpoint: pass checkpoint_path or set DUOMOTION_CHECKPOINT")
    trajectory_path = os.environ.get("DUOMOTION_TRAJECTORY_CHECKPOINT")
    if max_sessions is None:
        max_sessions = int(os.environ.get("DUOMOTION_MAX_SESSIONS", "8"))
    bundle = load_bundle(checkpoint_path, trajectory_path)
    app = FastAPI()
    app.state.bundle = bundle
    app.state.active_sessions = 0

    @app.get("/healthz")
    def healthz():
        return {"status": "ok", "sessions": app.state.active_sessions}

    @app.websocket("/session")
    async def session_endpoint(ws: WebSocket):
        await ws.accept()
        if app.state.active_sessions >= max_sessions:
            await ws.send_json({"type": "error", "code": "busy",
                                "message": f"max {max_sessions} sessions"})
            await ws.close()
            return
        app.state.active_sessions += 1
        session = Session(bundle)
        try:
            while True:
                # keep generating while the client is idle; block for input
                # only when there is no audio left to consume
                raw = None
                try:
                    if session.has_work():
                        try:
                            raw = await asyncio.wait_for(ws.receive_text(), timeout=0.001)
                        except asyncio.TimeoutError:
                            raw = None
                    else:
                        raw = await ws.receive_text()
                except WebSocketDisconnect:
                    return
                if raw is not None:
                    try:
                        msg = json.loads(raw)
                    except json.JSONDecodeError as exc:
                        raise ProtocolError(f"bad JSON: {exc}") from None
                    reply = session.handle(msg)
                    if reply is not None:
                        await ws.send_json(reply)
                for extra in session.pending_messages():
                    await ws.send_json(extra)
        except ProtocolError as exc:
            await ws.send_json({"type": "error", "code": exc.code, "message": str(exc)})
            await ws.close()
        except Exception as exc:   # generation failure: report the step, then close
            log.exception("session failed")
            await ws.send_json({
                "type": "error", "code": "generation",
                "message": f"step {session.step_count}: {exc}",
            })
            await ws.close()
        finally:
            app.state.active_sessions -= 1

    return app
