"""Documented binary container for motion clips and speech-feature caches.

ClipFile layout (little-endian):

    magic      4 bytes  b"DMCF"
    version    u32      1
    fps        f64
    J          u32      joint count
    Q          u32      per-joint rotation width (6)
    N          u32      frame count
    skel_hash  16 bytes ascii content hash of the skeleton
    character  1 byte   b"A" | b"B" | b"-"
    audio_len  u16      length of the utf-8 paired-audio reference (may be 0)
    audio_ref  audio_len bytes
    payload    N * (J*Q + 3 + 2) f64, row-major pose rows
               (rotations, root displacement, contact labels)

Feature cache layout (little-endian):

    magic      4 bytes  b"DMFC"
    version    u32      1
    fps        f64
    F          u32      frame count
    mel_dim    u32
    mel        F * mel_dim f64
    rhythm     F f64
    semantic   F i64
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .motion import MotionClip
from .skeleton import SkeletonDef
from .speech import SpeechFeatures

CLIP_MAGIC = b"DMCF"
FEATURE_MAGIC = b"DMFC"
FORMAT_VERSION = 1


class ClipFileError(ValueError):
    pass


@dataclass(frozen=True)
class ClipFile:
    clip: MotionClip
    skeleton_hash: str
    character: str = "-"
    audio_ref: str = ""

    def __post_init__(self):
        if self.character not in ("A", "B", "-"):
            raise ClipFileError("character must be 'A', 'B', or '-'")
        if len(self.skeleton_hash) != 16:
            raise ClipFileError("skeleton hash must be 16 characters")


def save_clip(path: str | Path, cf: ClipFile) -> None:
    clip = cf.clip
    j = clip.rotations.shape[1]
    rows = clip.to_pose_array().astype("<f8")
    audio = cf.audio_ref.encode()
    header = struct.pack(
        "<4sIdIII16scH",
        CLIP_MAGIC,
        FORMAT_VERSION,
        clip.fps,
        j,
        6,
        clip.frames,
        cf.skeleton_hash.encode(),
        cf.character.encode(),
        len(audio),
    )
    Path(path).write_bytes(header + audio + rows.tobytes())


def load_clip(path: str | Path) -> ClipFile:
    raw = Path(path).read_bytes()
    head_fmt = "<4sIdIII16scH"
    head_size = struct.calcsize(head_fmt)
    if len(raw) < head_size:
        raise ClipFileError(f"{path}: truncated header")
    magic, version, fps, j, q, n, skel_hash, char, audio_len = struct.unpack(
        head_fmt, raw[:head_size]
    )
    if magic != CLIP_MAGIC:
        raise ClipFileError(f"{path}: not a clip file (bad magic)")
    if version != FORMAT_VERSION:
        raise ClipFileError(f"{path}: unsupported version {version}")
    if q != 6:
        raise ClipFileError(f"{path}: unsupported rotation width {q}")
    pos = head_size
    audio_ref = raw[pos : pos + audio_len].decode()
    pos += audio_len
    width = j * q + 3 + 2
    expect = n * width * 8
    payload = raw[pos:]
    if len(payload) != expect:
        raise ClipFileError(
            f"{path}: payload is {len(payload)} bytes, header implies {expect}"
        )
    rows = np.frombuffer(payload, dtype="<f8").reshape(n, width)
    return ClipFile(
        clip=MotionClip.from_pose_array(rows.copy(), fps),
        skeleton_hash=skel_hash.decode(),
        character=char.decode(),
        audio_ref=audio_ref,
    )


def save_features(path: str | Path, feats: SpeechFeatures) -> None:
    f, mel_dim = feats.mel.shape
    header = struct.pack("<4sIdII", FEATURE_MAGIC, FORMAT_VERSION, feats.fps, f, mel_dim)
    body = (
        feats.mel.astype("<f8").tobytes()
        + feats.rhythm.astype("<f8").tobytes()
        + feats.semantic.astype("<i8").tobytes()
    )
    Path(path).write_bytes(header + body)


def load_features(path: str | Path) -> SpeechFeatures:
    raw = Path(path).read_bytes()
    head_fmt = "<4sIdII"
    head_size = struct.calcsize(head_fmt)
    if len(raw) < head_size:
        raise ClipFileError(f"{path}: truncated header")
    magic, version, fps, f, mel_dim = struct.unpack(head_fmt, raw[:head_size])
    if magic != FEATURE_MAGIC:
        raise ClipFileError(f"{path}: not a feature cache (bad magic)")
    if version != FORMAT_VERSION:
        raise ClipFileError(f"{path}: unsupported version {version}")
    expect = head_size + f * mel_dim * 8 + f * 8 + f * 8
    if len(raw) != expect:
        raise ClipFileError(f"{path}: size {len(raw)} does not match header ({expect})")
    pos = head_size
    mel = np.frombuffer(raw, dtype="<f8", count=f * mel_dim, offset=pos).reshape(f, mel_dim)
    pos += f * mel_dim * 8
    rhythm = np.frombuffer(raw, dtype="<f8", count=f, offset=pos)
    pos += f * 8
    semantic = np.frombuffer(raw, dtype="<i8", count=f, offset=pos)
    return SpeechFeatures(mel.copy(), rhythm.copy(), semantic.copy(), fps)


def verify_skeleton(cf: ClipFile, skel: SkeletonDef) -> None:
    if cf.skeleton_hash != skel.content_hash():
        raise ClipFileError(
            f"clip was recorded against skeleton {cf.skeleton_hash}, "
            f"got {skel.content_hash()}"
        )
