"""Websocket streaming protocol conformance against a tiny untrained model."""
import base64
import json

import numpy as np
import pytest
import torch
from fastapi.testclient import TestClient

from duomotion import diffusion
from duomotion.denoiser import TINY_CONFIG, MotionDenoiser
from duomotion.sampledata import click_track
from duomotion.service import MAX_PENDING_STEPS, build_app
from duomotion.skeleton import parse_skeleton
from duomotion.training import (
    PoseNormalizer,
    build_motion_checkpoint,
    save_checkpoint,
)


@pytest.fixture(scope="module")
def app_client(tmp_path_factory, request):
    skel = request.getfixturevalue("skel")
    torch.manual_seed(0)
    model = MotionDenoiser(skel, TINY_CONFIG, window=45, past=10).eval()
    sched = diffusion.make_schedule(8)
    norm = PoseNormalizer(mean=np.zeros(skel.pose_width), std=np.ones(skel.pose_width))
    path = tmp_path_factory.mktemp("svc") / "model.ckpt"
    save_checkpoint(path, build_motion_checkpoint(model, skel, sched, norm, fps=30.0))
    app = build_app(checkpoint_path=str(path), max_sessions=2)
    return TestClient(app)


def pcm_b64(seconds, phase=0.0):
    audio = click_track(seconds, phase_s=phase)
    return base64.b64encode(audio.samples.astype("<f4").tobytes()).decode()


def send(ws, **msg):
    ws.send_text(json.dumps(msg))


def recv(ws):
    return json.loads(ws.receive_text())


def drain_until(ws, kind, limit=50):
    """Collect messages until one of `kind` arrives; returns (target, all)."""
    seen = []
    for _ in range(limit):
        m = recv(ws)
        seen.append(m)
        if m["type"] == kind:
            return m, seen
    raise AssertionError(f"no {kind!r} within {limit} messages: {[m['type'] for m in seen]}")


class TestHandshake:
    def test_healthz(self, app_client):
        r = app_client.get("/healthz")
        assert r.status_code == 200
        assert r.json()["status"] == "ok"

    def test_session_ready(self, app_client, skel):
        with app_client.websocket_connect("/session") as ws:
            send(ws, type="start_session", seq=0)
            msg = recv(ws)
            assert msg["type"] == "session_ready"
            assert msg["stride"] == 15
            assert msg["window"] == 45
            assert msg["past"] == 10
            served = parse_skeleton(msg["skeleton"])
            assert served.content_hash() == skel.content_hash()

    def test_skeleton_hash_mismatch(self, app_client):
        with app_client.websocket_connect("/session") as ws:
            send(ws, type="start_session", seq=0, skeleton_hash="0" * 16)
            msg = recv(ws)
            assert msg["type"] == "error"
            assert msg["code"] == "protocol"

    def test_first_message_must_start(self, app_client):
        with app_client.websocket_connect("/session") as ws:
            send(ws, type="audio_chunk", seq=0, character="A", pcm="")
            msg = recv(ws)
            assert msg["type"] == "error"
            assert "start_session" in msg["message"]

    def test_seq_must_increase(self, app_client):
        with app_client.websocket_connect("/session") as ws:
            send(ws, type="start_session", seq=5)
            assert recv(ws)["type"] == "session_ready"
            send(ws, type="mask_control", seq=5, masked=True)
            msg, _ = drain_until(ws, "error")
            assert "seq" in msg["message"]

    def test_unknown_type_rejected(self, app_client):
        with app_client.websocket_connect("/session") as ws:
            send(ws, type="start_session", seq=0)
            recv(ws)
            send(ws, type="dance_mode", seq=1)
            msg, _ = drain_until(ws, "error")
            assert "unknown message type" in msg["message"]

    def test_bad_json(self, app_client):
        with app_client.websocket_connect("/session") as ws:
            ws.send_text("{nope")
            msg = recv(ws)
            assert msg["type"] == "error"
            assert "JSON" in msg["message"]


class TestStreaming:
    def test_frames_out_contiguous(self, app_client, skel):
        with app_client.websocket_connect("/session") as ws:
            send(ws, type="start_session", seq=0, seed=0)
            recv(ws)
            for i, char in enumerate(("A", "B")):
                send(ws, type="audio_chunk", seq=1 + i, character=char,
                     pcm=pcm_b64(3.0), sample_rate=16000)
            blocks = []
            while len(blocks) < 3:
                m = recv(ws)
                if m["type"] == "frames_out":
                    blocks.append(m)
                else:
                    assert m["type"] in ("stats", "stall")
            # gap-free, stride-sized, decodable rows for both characters
            expect_start = 0
            for b in blocks:
                assert b["start"] == expect_start
                assert b["stop"] - b["start"] == 15
                assert b["pose_width"] == skel.pose_width
                for c in ("A", "B"):
                    rows = np.frombuffer(base64.b64decode(b["poses"][c]), dtype="<f4")
                    assert rows.size == 15 * skel.pose_width
                    assert np.isfinite(rows).all()
                expect_start = b["stop"]

    def test_stats_follow_frames(self, app_client):
        with app_client.websocket_connect("/session") as ws:
            send(ws, type="start_session", seq=0)
            recv(ws)
            for i, char in enumerate(("A", "B")):
                send(ws, type="audio_chunk", seq=1 + i, character=char,
                     pcm=pcm_b64(2.5), sample_rate=16000)
            stats, seen = drain_until(ws, "stats")
            assert seen[-2]["type"] == "frames_out"
            assert stats["step"] == 1
            assert stats["latency_ms"]["total_ms"] > 0

    def test_stall_on_underrun(self, app_client):
        with app_client.websocket_connect("/session") as ws:
            send(ws, type="start_session", seq=0)
            recv(ws)
            # 2.5 s of audio -> ~64 stable frames -> one 15-frame step needs 50;
            # after a few steps the buffer runs dry and a stall notice arrives
            for i, char in enumerate(("A", "B")):
                send(ws, type="audio_chunk", seq=1 + i, character=char,
                     pcm=pcm_b64(2.5), sample_rate=16000)
            stall, seen = drain_until(ws, "stall")
            assert stall["need_frames"] > stall["have_frames"]
            # audio resumes -> frames resume
            for i, char in enumerate(("A", "B")):
                send(ws, type="audio_chunk", seq=10 + i, character=char,
                     pcm=pcm_b64(2.0), sample_rate=16000)
            more, _ = drain_until(ws, "frames_out")
            assert more["start"] >= 15

    def test_controls_accepted_mid_stream(self, app_client):
        with app_client.websocket_connect("/session") as ws:
            send(ws, type="start_session", seq=0)
            recv(ws)
            send(ws, type="trajectory_control", seq=1, character="A",
                 waypoints=[[0.0, 2.0]], alpha=0.9)
            send(ws, type="mask_control", seq=2, masked=True)
            send(ws, type="guidance_control", seq=3, gamma=2.0)
            for i, char in enumerate(("A", "B")):
                send(ws, type="audio_chunk", seq=4 + i, character=char,
                     pcm=pcm_b64(2.5), sample_rate=16000)
            frames, _ = drain_until(ws, "frames_out")
            assert frames["stop"] == 15

    def test_bad_waypoints(self, app_client):
        with app_client.websocket_connect("/session") as ws:
            send(ws, type="start_session", seq=0)
            recv(ws)
            send(ws, type="trajectory_control", seq=1, character="A",
                 waypoints=[[1.0]])
            msg, _ = drain_until(ws, "error")
            assert "waypoints" in msg["message"]

    def test_sample_rate_change_rejected(self, app_client):
        with app_client.websocket_connect("/session") as ws:
            send(ws, type="start_session", seq=0)
            recv(ws)
            send(ws, type="audio_chunk", seq=1, character="A",
                 pcm=pcm_b64(0.5), sample_rate=16000)
            send(ws, type="audio_chunk", seq=2, character="A",
                 pcm=pcm_b64(0.5), sample_rate=8000)
            msg, _ = drain_until(ws, "error")
            assert "sample rate" in msg["message"]


class TestLimits:
    def test_max_sessions(self, app_client):
        with app_client.websocket_connect("/session") as ws1, \
             app_client.websocket_connect("/session") as ws2:
            send(ws1, type="start_session", seq=0)
            recv(ws1)
            send(ws2, type="start_session", seq=0)
            recv(ws2)
            with app_client.websocket_connect("/session") as ws3:
                msg = recv(ws3)
                assert msg["type"] == "error"
                assert msg["code"] == "busy"

    def test_bounded_lookahead(self, app_client):
        # plenty of audio: the service still emits in bounded batches rather
        # than unboundedly sprinting ahead of the socket
        with app_client.websocket_connect("/session") as ws:
            send(ws, type="start_session", seq=0)
            recv(ws)
            for i, char in enumerate(("A", "B")):
                send(ws, type="audio_chunk", seq=1 + i, character=char,
                     pcm=pcm_b64(20.0), sample_rate=16000)
            count = 0
            stop = 0
            for _ in range(4 * MAX_PENDING_STEPS):
                m = recv(ws)
                if m["type"] == "frames_out":
                    count += 1
                    stop = m["stop"]
            assert count >= MAX_PENDING_STEPS
            assert stop == count * 15
