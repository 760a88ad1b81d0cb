"""Command-line surface: preprocess | train | generate | evaluate | stream.

Preprocessed dataset directory layout (produced by `preprocess`, consumed by
`train` and `evaluate`):

    skeleton.txt            the rig all clips share
    pair000_A.clip          ClipFile per pair per character
    pair000_A.feat          aligned speech-feature cache
    pair000_A.wav           source audio
    ...
    manifest.txt            one line per pair: name, frames, fps
"""
from __future__ import annotations

import logging
import sys
from pathlib import Path

import click
import numpy as np
import torch

from . import bvh, clipfile, diffusion, metrics, sampledata
from .config import Config, load_config
from .denoiser import DenoiserConfig, MotionDenoiser, TrajectoryDenoiser
from .motion import MotionClip, TwoPersonClip
from .runtime import ControlInput, GenerationSession, generate_offline
from .skeleton import SkeletonDef, builtin_skeleton, format_skeleton, load_skeleton, parse_skeleton
from .speech import AudioTrack, StubTokenizer, extract_speech_features, load_wav, save_wav
from .training import (
    LossWeights,
    PairedSequence,
    TrainConfig,
    build_trajectory_dataset,
    build_window_dataset,
    load_checkpoint,
    load_motion_model,
    load_trajectory_model,
    save_checkpoint,
    train,
    train_trajectory,
)

log = logging.getLogger("duomotion")


def _resolve_skeleton(name: str) -> SkeletonDef:
    if name in ("tiny9", "body65"):
        return builtin_skeleton(name)
    return load_skeleton(name)


def _seed_everything(seed: int) -> None:
    np.random.seed(seed)
    torch.manual_seed(seed)


@click.group()
@click.option("--config", "config_path", type=click.Path(exists=True), default=None,
              help="key=value config file; defaults apply when omitted.")
@click.option("--seed", type=int, default=None, help="Override the config seed.")
@click.option("-v", "--verbose", is_flag=True)
@click.pass_context
def main(ctx, config_path, seed, verbose):
    """Two-person co-speech motion synthesis toolkit."""
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    cfg = load_config(config_path) if config_path else Config()
    if seed is not None:
        cfg.seed = seed
    ctx.obj = cfg


# ------------------------------------------------------------- preprocess


def _pair_stems(data_dir: Path, suffix: str) -> list[str]:
    return sorted(p.name[: -len(f"_A{suffix}")] for p in data_dir.glob(f"*_A{suffix}"))


def _write_pair(out: Path, name: str, pair: TwoPersonClip, skel: SkeletonDef, fps: float, seed: int) -> int:
    tok = StubTokenizer(seed=seed)
    for char, clip, audio in (("A", pair.clip_a, pair.audio_a), ("B", pair.clip_b, pair.audio_b)):
        stem = out / f"{name}_{char}"
        clipfile.save_clip(stem.with_suffix(".clip"),
                           clipfile.ClipFile(clip, skel.content_hash(), char, f"{name}_{char}.wav"))
        save_wav(stem.with_suffix(".wav"), audio)
        feats = extract_speech_features(audio, tok, fps, target_frames=clip.frames)
        clipfile.save_features(stem.with_suffix(".feat"), feats)
    return pair.clip_a.frames


@main.command()
@click.option("--out", "out_dir", type=click.Path(), required=True)
@click.option("--source", type=click.Path(exists=True), default=None,
              help="Directory with pairNNN_{A,B}.bvh + .wav files; bundled synthetic set when omitted.")
@click.option("--count", type=int, default=5, help="Synthetic pair count (bundled source only).")
@click.pass_obj
def preprocess(cfg: Config, out_dir, source, count):
    """Build clip files and aligned feature caches from raw captures or the
    bundled synthetic sample set."""
    skel = _resolve_skeleton(cfg.skeleton)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "skeleton.txt").write_text(format_skeleton(skel))
    manifest = []
    if source is None:
        for i, pair in enumerate(sampledata.sample_dataset(count, skel)):
            name = f"pair{i:03d}"
            frames = _write_pair(out, name, pair, skel, cfg.fps, cfg.seed)
            manifest.append(f"{name} {frames} {cfg.fps:g}")
    else:
        src = Path(source)
        stems = _pair_stems(src, ".bvh")
        if not stems:
            raise click.ClickException(f"no *_A.bvh files found in {src}")
        for name in stems:
            clips = {}
            audio = {}
            for char in ("A", "B"):
                bvh_path = src / f"{name}_{char}.bvh"
                wav_path = src / f"{name}_{char}.wav"
                if not bvh_path.exists() or not wav_path.exists():
                    raise click.ClickException(f"pair {name} is missing {char}-side .bvh/.wav")
                clips[char] = bvh.import_bvh(bvh_path, skel, cfg.fps)
                audio[char] = load_wav(wav_path)
            pair = TwoPersonClip(clips["A"], clips["B"], audio_a=audio["A"], audio_b=audio["B"])
            frames = _write_pair(out, name, pair, skel, cfg.fps, cfg.seed)
            manifest.append(f"{name} {frames} {cfg.fps:g}")
    (out / "manifest.txt").write_text("\n".join(manifest) + "\n")
    click.echo(f"wrote {len(manifest)} pairs to {out}")


def load_dataset(data_dir: str | Path) -> tuple[list[PairedSequence], SkeletonDef]:
    """Read a preprocessed dataset directory back into paired sequences."""
    data_dir = Path(data_dir)
    skel = parse_skeleton((data_dir / "skeleton.txt").read_text())
    sequences = []
    for name in _pair_stems(data_dir, ".clip"):
        parts = {}
        feats = {}
        for char in ("A", "B"):
            cf = clipfile.load_clip(data_dir / f"{name}_{char}.clip")
            clipfile.verify_skeleton(cf, skel)
            parts[char] = cf.clip
            feats[char] = clipfile.load_features(data_dir / f"{name}_{char}.feat")
        sequences.append(
            PairedSequence(
                TwoPersonClip(parts["A"], parts["B"]), feats["A"], feats["B"], source_id=name
            )
        )
    if not sequences:
        raise click.ClickException(f"no clip pairs found in {data_dir}")
    return sequences, skel


# ------------------------------------------------------------------ train


def _train_config(cfg: Config) -> TrainConfig:
    return TrainConfig(
        epochs=cfg.epochs,
        steps_per_epoch=cfg.steps_per_epoch,
        batch_size=cfg.batch_size,
        lr=cfg.lr,
        p_mask=cfg.p_mask,
        seed=cfg.seed,
        weights=LossWeights(lambda_pos=cfg.lambda_pos, lambda_vel=cfg.lambda_vel),
    )


def _denoiser_config(cfg: Config) -> DenoiserConfig:
    return DenoiserConfig(
        layers=cfg.layers, heads=cfg.heads, hidden=cfg.hidden,
        feed_forward=cfg.feed_forward, dropout=cfg.dropout,
    )


@main.command("train")
@click.option("--data", "data_dir", type=click.Path(exists=True), required=True)
@click.option("--out", "out_path", type=click.Path(), required=True)
@click.option("--kind", type=click.Choice(["motion", "trajectory"]), default="motion")
@click.pass_obj
def train_cmd(cfg: Config, data_dir, out_path, kind):
    """Train the motion denoiser (or the trajectory model) on a preprocessed
    dataset and write a checkpoint."""
    _seed_everything(cfg.seed)
    sequences, skel = load_dataset(data_dir)
    sched = diffusion.make_schedule(cfg.diffusion_steps, cfg.schedule)
    tcfg = _train_config(cfg)
    rng = np.random.default_rng(cfg.seed)
    if kind == "motion":
        windows = build_window_dataset(sequences, cfg.window, cfg.past, cfg.stride, rng=rng)
        model = MotionDenoiser(skel, _denoiser_config(cfg), window=cfg.window, past=cfg.past)
        log_rows: list[dict] = []
        payload = train(model, windows, skel, sched, tcfg, fps=cfg.fps, log_rows=log_rows)
        log_path = Path(out_path).with_suffix(".log.txt")
        log_path.write_text(
            "\n".join(
                " ".join(f"{k}={v:.6g}" for k, v in row.items()) for row in log_rows
            ) + "\n"
        )
    else:
        windows = build_trajectory_dataset(sequences, cfg.window, cfg.stride, rng=rng)
        model = TrajectoryDenoiser(_denoiser_config(cfg), window=cfg.window)
        payload = train_trajectory(model, windows, sched, tcfg, fps=cfg.fps)
    save_checkpoint(out_path, payload)
    click.echo(f"saved {kind} checkpoint to {out_path}")


# --------------------------------------------------------------- generate


def _load_motion(path: str) -> tuple[MotionDenoiser, SkeletonDef, diffusion.NoiseSchedule, object]:
    payload = load_checkpoint(path)
    if payload.get("kind") != "motion":
        raise click.ClickException(f"{path} is a {payload.get('kind')!r} checkpoint, need motion")
    return load_motion_model(payload)


@main.command()
@click.option("--checkpoint", type=click.Path(exists=True), required=True)
@click.option("--trajectory-checkpoint", type=click.Path(exists=True), default=None)
@click.option("--out", "out_dir", type=click.Path(), required=True)
@click.option("--audio-a", type=click.Path(exists=True), default=None)
@click.option("--audio-b", type=click.Path(exists=True), default=None)
@click.option("--duration", type=float, default=4.0, help="Seconds to generate.")
@click.option("--gamma", type=float, default=None, help="Guidance scale override.")
@click.option("--alpha", type=float, default=None, help="Trajectory blend override.")
@click.option("--stride", type=int, default=None, help="Frames per step override.")
@click.option("--export-bvh", "export_bvh_flag", is_flag=True)
@click.pass_obj
def generate(cfg: Config, checkpoint, trajectory_checkpoint, out_dir, audio_a, audio_b,
             duration, gamma, alpha, stride, export_bvh_flag):
    """Offline two-character generation from audio; writes gen_A/gen_B clip
    files (and optional BVH)."""
    _seed_everything(cfg.seed)
    model, skel, sched, norm = _load_motion(checkpoint)
    traj_bundle = None
    if trajectory_checkpoint:
        tp = load_checkpoint(trajectory_checkpoint)
        if tp.get("kind") != "trajectory":
            raise click.ClickException(f"{trajectory_checkpoint} is not a trajectory checkpoint")
        traj_bundle = load_trajectory_model(tp)
    if audio_a:
        track_a, track_b = load_wav(audio_a), load_wav(audio_b or audio_a)
    else:
        track_a = sampledata.click_track(duration + 2.0)
        track_b = sampledata.click_track(duration + 2.0, phase_s=0.25)
    tok = StubTokenizer(seed=cfg.seed)
    feats_a = extract_speech_features(track_a, tok, cfg.fps)
    feats_b = extract_speech_features(track_b, tok, cfg.fps)
    session = GenerationSession(
        model, skel, sched, norm, fps=cfg.fps,
        stride=stride or cfg.stride,
        gamma=gamma if gamma is not None else cfg.gamma,
        alpha=alpha if alpha is not None else cfg.alpha,
        seed=cfg.seed,
        trajectory_model=traj_bundle,
    )
    pair = generate_offline(session, feats_a, feats_b, duration,
                            ControlInput(activity=cfg.activity))
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for char, clip in (("A", pair.clip_a), ("B", pair.clip_b)):
        clipfile.save_clip(out / f"gen_{char}.clip",
                           clipfile.ClipFile(clip, skel.content_hash(), char))
        if export_bvh_flag:
            bvh.export_bvh(out / f"gen_{char}.bvh", clip, skel)
    click.echo(f"generated {pair.clip_a.frames} frames per character into {out}")


# --------------------------------------------------------------- evaluate


def _load_pairs(data_dir: Path, skel: SkeletonDef) -> tuple[list[TwoPersonClip], list[MotionClip]]:
    pairs = []
    singles = []
    for name in _pair_stems(data_dir, ".clip"):
        parts = {}
        for char in ("A", "B"):
            cf = clipfile.load_clip(data_dir / f"{name}_{char}.clip")
            clipfile.verify_skeleton(cf, skel)
            parts[char] = cf.clip
        pairs.append(TwoPersonClip(parts["A"], parts["B"]))
        singles.extend(parts.values())
    # generated output layout (gen_A/gen_B) counts as one unnamed pair
    if (data_dir / "gen_A.clip").exists():
        parts = {c: clipfile.load_clip(data_dir / f"gen_{c}.clip").clip for c in ("A", "B")}
        pairs.append(TwoPersonClip(parts["A"], parts["B"]))
        singles.extend(parts.values())
    if not pairs:
        raise click.ClickException(f"no clips found in {data_dir}")
    return pairs, singles


@main.command()
@click.option("--generated", type=click.Path(exists=True), required=True)
@click.option("--reference", type=click.Path(exists=True), required=True)
@click.option("--out", "out_base", type=click.Path(), required=True)
@click.option("--name", default="generated", help="Row label in the report.")
@click.pass_obj
def evaluate(cfg: Config, generated, reference, out_base, name):
    """Compute the metric suite for a generated set against a reference set;
    writes `<out>.txt` and `<out>.json`."""
    skel = _resolve_skeleton(cfg.skeleton)
    gen_pairs, gen_clips = _load_pairs(Path(generated), skel)
    ref_pairs, ref_clips = _load_pairs(Path(reference), skel)
    row = {
        "fpd": metrics.fpd_clips(gen_clips, ref_clips, skel),
        "fdd": metrics.fdd(gen_pairs, ref_pairs, skel),
        "diversity": metrics.diversity(
            [c.to_pose_array() for c in gen_clips]
        ) if len(gen_clips) >= 2 and len({c.frames for c in gen_clips}) == 1 else 0.0,
        "foot_slide": float(np.mean([metrics.foot_slide(c, skel) for c in gen_clips])),
        "dynamism": float(np.mean([metrics.dynamism(c) for c in gen_clips])),
    }
    wavs = sorted(Path(generated).glob("*.wav")) or sorted(Path(reference).glob("*.wav"))
    if wavs:
        scores = []
        tok = StubTokenizer(seed=cfg.seed)
        for wav, clip in zip(wavs, gen_clips):
            feats = extract_speech_features(load_wav(wav), tok, cfg.fps)
            scores.append(metrics.beat_align_clip(clip, feats.rhythm, cfg.fps, skel))
        row["beat_align"] = float(np.mean(scores))
    metrics.write_report({name: row}, out_base)
    click.echo(Path(out_base).with_suffix(".txt").read_text())


# ----------------------------------------------------------------- stream


@main.command()
@click.option("--checkpoint", type=click.Path(exists=True), required=True)
@click.option("--host", default="127.0.0.1")
@click.option("--port", type=int, default=8787)
@click.pass_obj
def stream(cfg: Config, checkpoint, host, port):
    """Launch the websocket streaming service."""
    import uvicorn

    from .service import build_app

    app = build_app(checkpoint_path=checkpoint)
    uvicorn.run(app, host=host, port=port, log_level="info")


if __name__ == "__main__":
    sys.exit(main())
