"""Speech feature extraction: log-mel bands, an amplitude-scaled onset
rhythm curve, and discrete semantic tokens, all aligned to the motion rate.

STFT window 64 ms, hop = one motion frame, 27 mel bands over 0-8 kHz.
A deterministic k-means stub stands in for a pretrained speech tokenizer;
anything honoring `SemanticTokenizer` plugs into the same slot.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Protocol

import numpy as np
from scipy.io import wavfile
from scipy.signal import resample_poly

TARGET_SR = 16000
MEL_BANDS = 27
MEL_FMAX = 8000.0
TOKEN_SEGMENT_S = 0.020
RHYTHM_SIGMA_FRAMES = 2.0


class AudioError(ValueError):
    pass


@dataclass
class AudioTrack:
    samples: np.ndarray   # mono float in [-1, 1]
    sample_rate: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise AudioError("audio must be mono")
        if not np.all(np.isfinite(self.samples)):
            raise AudioError("audio contains non-finite samples")

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass
class SpeechFeatures:
    mel: np.ndarray       # [F, 27]
    rhythm: np.ndarray    # [F]
    semantic: np.ndarray  # [F] int token ids
    fps: float

    @property
    def frames(self) -> int:
        return self.mel.shape[0]

    def sliced(self, start: int, stop: int) -> "SpeechFeatures":
        return SpeechFeatures(
            self.mel[start:stop], self.rhythm[start:stop], self.semantic[start:stop], self.fps
        )


def load_wav(path: str | Path) -> AudioTrack:
    """Read a WAV file (PCM16/32 or float32, mono or stereo-downmixed) and
    resample to 16 kHz."""
    sr, data = wavfile.read(str(path))
    data = np.asarray(data)
    if data.ndim == 2:
        data = data.mean(axis=1)
    if data.dtype == np.int16:
        data = data / 32768.0
    elif data.dtype == np.int32:
        data = data / 2147483648.0
    elif data.dtype == np.uint8:
        data = (data.astype(np.float64) - 128.0) / 128.0
    data = data.astype(np.float64)
    return resample_track(AudioTrack(data, sr))


def save_wav(path: str | Path, audio: AudioTrack) -> None:
    pcm = np.clip(audio.samples, -1.0, 1.0)
    wavfile.write(str(path), audio.sample_rate, (pcm * 32767).astype(np.int16))


def resample_track(audio: AudioTrack, target_sr: int = TARGET_SR) -> AudioTrack:
    if audio.sample_rate == target_sr:
        return audio
    g = np.gcd(int(audio.sample_rate), target_sr)
    out = resample_poly(audio.samples, target_sr // g, audio.sample_rate // g)
    return AudioTrack(out, target_sr)


def _mel_scale(hz: np.ndarray) -> np.ndarray:
    return 2595.0 * np.log10(1.0 + hz / 700.0)


def _mel_to_hz(mel: np.ndarray) -> np.ndarray:
    return 700.0 * (10.0 ** (mel / 2595.0) - 1.0)


def mel_filterbank(n_fft: int, sr: int, n_bands: int = MEL_BANDS, fmax: float = MEL_FMAX) -> np.ndarray:
    """Triangular filters [n_bands, n_fft//2 + 1]."""
    edges = _mel_to_hz(np.linspace(_mel_scale(np.array(0.0)), _mel_scale(np.array(fmax)), n_bands + 2))
    bins = np.fft.rfftfreq(n_fft, d=1.0 / sr)
    fb = np.zeros((n_bands, len(bins)))
    for b in range(n_bands):
        lo, mid, hi = edges[b], edges[b + 1], edges[b + 2]
        up = (bins - lo) / max(mid - lo, 1e-9)
        down = (hi - bins) / max(hi - mid, 1e-9)
        fb[b] = np.clip(np.minimum(up, down), 0.0, None)
    return fb


def _stft_frames(samples: np.ndarray, hop: float, win: int, n_frames: int) -> np.ndarray:
    """Hann-windowed zero-padded frames at centers i*hop (hop may be fractional)."""
    window = np.hanning(win)
    half = win // 2
    padded = np.pad(samples, (half, win))
    out = np.empty((n_frames, win))
    for i in range(n_frames):
        start = int(round(i * hop))
        out[i] = padded[start : start + win]
    return out * window


def _native_frame_count(n_samples: int, sr: int, fps: float) -> int:
    # floor keeps features invariant to sub-hop trailing padding
    return max(1, int(np.floor(n_samples * fps / sr)))


def mel_features(audio: AudioTrack, target_fps: float) -> np.ndarray:
    """[F, 27] log-compressed mel energies, one row per motion frame."""
    if len(audio.samples) == 0:
        raise AudioError("empty audio")
    sr = audio.sample_rate
    win = int(round(0.064 * sr))
    n_fft = 1 << (win - 1).bit_length()
    hop = sr / target_fps
    n_frames = _native_frame_count(len(audio.samples), sr, target_fps)
    frames = _stft_frames(audio.samples, hop, win, n_frames)
    spec = np.abs(np.fft.rfft(frames, n=n_fft, axis=1)) ** 2
    fb = mel_filterbank(n_fft, sr)
    return np.log1p(spec @ fb.T)


def onset_envelope(audio: AudioTrack, target_fps: float) -> np.ndarray:
    """Spectral-flux onset strength at the motion frame rate."""
    mel = mel_features(audio, target_fps)
    flux = np.diff(mel, axis=0, prepend=mel[:1])
    return np.clip(flux, 0.0, None).sum(axis=1)


def rhythm_curve(audio: AudioTrack, target_fps: float) -> np.ndarray:
    """[F] nonnegative onset curve: peak-picked onsets scaled by local
    waveform amplitude, then Gaussian smoothed."""
    if len(audio.samples) == 0:
        raise AudioError("empty audio")
    env = onset_envelope(audio, target_fps)
    n = len(env)
    threshold = 0.1 * env.max() if env.max() > 0 else np.inf
    impulses = np.zeros(n)
    hop = audio.sample_rate / target_fps
    for i in range(n):
        left = env[i - 1] if i > 0 else -np.inf
        right = env[i + 1] if i < n - 1 else -np.inf
        if env[i] >= threshold and env[i] >= left and env[i] > right:
            lo = int(i * hop)
            hi = min(int((i + 2) * hop), len(audio.samples))
            amp = np.abs(audio.samples[lo:hi]).max() if hi > lo else 0.0
            impulses[i] = amp
    radius = int(np.ceil(4 * RHYTHM_SIGMA_FRAMES))
    x = np.arange(-radius, radius + 1)
    kernel = np.exp(-0.5 * (x / RHYTHM_SIGMA_FRAMES) ** 2)
    kernel /= kernel.sum()
    return np.convolve(impulses, kernel, mode="same")


class SemanticTokenizer(Protocol):
    """Audio -> one integer id per 20 ms segment."""

    codebook_size: int

    def tokenize(self, audio: AudioTrack) -> np.ndarray: ...


class StubTokenizer:
    """Deterministic stand-in for a pretrained speech tokenizer: k-means over
    per-segment mel vectors with a fixed seed. Fit on a corpus once, or lazily
    on the first input seen."""

    def __init__(self, codebook_size: int = 512, seed: int = 0):
        self.codebook_size = codebook_size
        self.seed = seed
        self.centroids: np.ndarray | None = None

    def _segment_mels(self, audio: AudioTrack) -> np.ndarray:
        seg_fps = 1.0 / TOKEN_SEGMENT_S
        return mel_features(audio, seg_fps)

    def fit(self, corpus: list[AudioTrack]) -> "StubTokenizer":
        frames = np.concatenate([self._segment_mels(a) for a in corpus], axis=0)
        k = min(self.codebook_size, len(frames))
        rng = np.random.default_rng(self.seed)
        centroids = frames[rng.choice(len(frames), size=k, replace=False)]
        for _ in range(25):
            d = np.linalg.norm(frames[:, None, :] - centroids[None], axis=2)
            assign = d.argmin(axis=1)
            for c in range(k):
                members = frames[assign == c]
                if len(members):
                    centroids[c] = members.mean(axis=0)
        self.centroids = centroids
        return self

    def tokenize(self, audio: AudioTrack) -> np.ndarray:
        mels = self._segment_mels(audio)
        if self.centroids is None:
            self.fit([audio])
        d = np.linalg.norm(mels[:, None, :] - self.centroids[None], axis=2)
        return d.argmin(axis=1).astype(np.int64)


def semantic_tokens(audio: AudioTrack, tokenizer: SemanticTokenizer, target_fps: float) -> np.ndarray:
    """[F] token ids at the motion rate: one raw id per 20 ms, each motion
    frame taking the temporally nearest segment's id."""
    try:
        raw = tokenizer.tokenize(audio)
    except Exception as exc:
        raise AudioError(f"semantic tokenizer failed: {exc}") from exc
    n_frames = _native_frame_count(len(audio.samples), audio.sample_rate, target_fps)
    frame_times = np.arange(n_frames) / target_fps
    seg = np.clip(np.round(frame_times / TOKEN_SEGMENT_S).astype(int), 0, len(raw) - 1)
    return raw[seg]


def align_features_to_fps(
    stream: np.ndarray, native_fps: float, target_fps: float, target_frames: int, *, discrete: bool = False
) -> np.ndarray:
    """Resample a [F, ...] stream to exactly `target_frames` rows: linear
    interpolation for continuous data, nearest-sample for discrete ids."""
    stream = np.asarray(stream)
    available = len(stream) / native_fps
    required = target_frames / target_fps
    if available + 1e-9 < required:
        raise AudioError(
            f"stream covers {available:.3f}s but {required:.3f}s required"
        )
    if native_fps == target_fps and len(stream) == target_frames:
        return stream.copy()
    src_t = np.arange(len(stream)) / native_fps
    dst_t = np.arange(target_frames) / target_fps
    if discrete:
        idx = np.clip(np.round(dst_t * native_fps).astype(int), 0, len(stream) - 1)
        return stream[idx]
    flat = stream.reshape(len(stream), -1)
    out = np.stack([np.interp(dst_t, src_t, flat[:, c]) for c in range(flat.shape[1])], axis=1)
    return out.reshape((target_frames,) + stream.shape[1:])


def extract_speech_features(
    audio: AudioTrack, tokenizer: SemanticTokenizer, target_fps: float, target_frames: int | None = None
) -> SpeechFeatures:
    """Full per-frame feature bundle, optionally cut/aligned to a clip length."""
    mel = mel_features(audio, target_fps)
    rhy = rhythm_curve(audio, target_fps)
    sem = semantic_tokens(audio, tokenizer, target_fps)
    n = len(mel)
    if target_frames is not None:
        mel = align_features_to_fps(mel, target_fps, target_fps, target_frames)
        rhy = align_features_to_fps(rhy, target_fps, target_fps, target_frames)
        sem = align_features_to_fps(sem, target_fps, target_fps, target_frames, discrete=True)
    return SpeechFeatures(mel=mel, rhythm=rhy, semantic=sem, fps=target_fps)
