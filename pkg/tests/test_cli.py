"""End-to-end command-line pipeline on a miniature synthetic dataset."""
import json

import numpy as np
import pytest
from click.testing import CliRunner

from duomotion.cli import load_dataset, main
from duomotion.clipfile import load_clip
from duomotion.training import load_checkpoint

TINY_CFG = """\
skeleton = tiny9
layers = 1
heads = 2
hidden = 32
feed_forward = 64
dropout = 0.0
epochs = 1
steps_per_epoch = 2
batch_size = 2
"""


@pytest.fixture(scope="module")
def runner():
    return CliRunner()


@pytest.fixture(scope="module")
def workspace(tmp_path_factory, runner):
    """Preprocessed dataset + one trained tiny checkpoint, shared read-only."""
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "tiny.cfg"
    cfg.write_text(TINY_CFG)
    data = root / "data"
    r = runner.invoke(main, ["--config", str(cfg), "preprocess",
                             "--out", str(data), "--count", "2"])
    assert r.exit_code == 0, r.output
    ckpt = root / "model.ckpt"
    r = runner.invoke(main, ["--config", str(cfg), "train",
                             "--data", str(data), "--out", str(ckpt)])
    assert r.exit_code == 0, r.output
    return {"root": root, "cfg": cfg, "data": data, "ckpt": ckpt}


class TestPreprocess:
    def test_layout(self, workspace):
        data = workspace["data"]
        assert (data / "skeleton.txt").exists()
        assert (data / "manifest.txt").exists()
        for stem in ("pair000", "pair001"):
            for char in ("A", "B"):
                for suffix in (".clip", ".feat", ".wav"):
                    assert (data / f"{stem}_{char}{suffix}").exists(), f"{stem}_{char}{suffix}"
        lines = (data / "manifest.txt").read_text().strip().splitlines()
        assert len(lines) == 2
        name, frames, fps = lines[0].split()
        assert name == "pair000" and int(frames) == 180 and float(fps) == 30.0

    def test_clip_contents(self, workspace, skel):
        cf = load_clip(workspace["data"] / "pair000_A.clip")
        assert cf.character == "A"
        assert cf.skeleton_hash == skel.content_hash()
        assert cf.clip.frames == 180

    def test_load_dataset_roundtrip(self, workspace, skel):
        seqs, loaded_skel = load_dataset(workspace["data"])
        assert len(seqs) == 2
        assert loaded_skel.content_hash() == skel.content_hash()
        for seq in seqs:
            assert seq.feats_a.frames == seq.pair.frames

    def test_missing_source_pair_errors(self, runner, tmp_path):
        src = tmp_path / "src"
        src.mkdir()
        (src / "pair000_A.bvh").write_text("HIERARCHY\n")
        r = runner.invoke(main, ["preprocess", "--out", str(tmp_path / 'o'),
                                 "--source", str(src)])
        assert r.exit_code != 0
        assert "missing" in r.output


class TestTrain:
    def test_checkpoint_and_log(self, workspace):
        payload = load_checkpoint(workspace["ckpt"])
        assert payload["kind"] == "motion"
        assert payload["config"]["hidden"] == 32
        log = workspace["ckpt"].with_suffix(".log.txt")
        assert log.exists()
        assert len(log.read_text().strip().splitlines()) == 2  # 1 epoch x 2 steps

    def test_trajectory_kind(self, workspace, runner):
        out = workspace["root"] / "traj.ckpt"
        r = runner.invoke(main, ["--config", str(workspace["cfg"]), "train",
                                 "--data", str(workspace["data"]),
                                 "--out", str(out), "--kind", "trajectory"])
        assert r.exit_code == 0, r.output
        assert load_checkpoint(out)["kind"] == "trajectory"

    def test_empty_data_dir_errors(self, workspace, runner, tmp_path):
        empty = tmp_path / "empty"
        empty.mkdir()
        (empty / "skeleton.txt").write_text(
            (workspace["data"] / "skeleton.txt").read_text()
        )
        r = runner.invoke(main, ["train", "--data", str(empty),
                                 "--out", str(tmp_path / "x.ckpt")])
        assert r.exit_code != 0


class TestGenerate:
    def test_writes_clip_pair(self, workspace, runner):
        out = workspace["root"] / "gen"
        r = runner.invoke(main, ["--config", str(workspace["cfg"]), "generate",
                                 "--checkpoint", str(workspace["ckpt"]),
                                 "--out", str(out), "--duration", "1.0"])
        assert r.exit_code == 0, r.output
        for char in ("A", "B"):
            cf = load_clip(out / f"gen_{char}.clip")
            assert cf.clip.frames == 30
            assert np.isfinite(cf.clip.to_pose_array()).all()

    def test_bvh_export(self, workspace, runner):
        out = workspace["root"] / "gen_bvh"
        r = runner.invoke(main, ["--config", str(workspace["cfg"]), "generate",
                                 "--checkpoint", str(workspace["ckpt"]),
                                 "--out", str(out), "--duration", "0.5",
                                 "--export-bvh"])
        assert r.exit_code == 0, r.output
        assert (out / "gen_A.bvh").read_text().startswith("HIERARCHY")

    def test_wrong_checkpoint_kind(self, workspace, runner):
        traj = workspace["root"] / "traj.ckpt"
        if not traj.exists():
            r = runner.invoke(main, ["--config", str(workspace["cfg"]), "train",
                                     "--data", str(workspace["data"]),
                                     "--out", str(traj), "--kind", "trajectory"])
            assert r.exit_code == 0
        r = runner.invoke(main, ["generate", "--checkpoint", str(traj),
                                 "--out", str(workspace["root"] / "x")])
        assert r.exit_code != 0
        assert "need motion" in r.output


class TestEvaluate:
    def test_report_written(self, workspace, runner):
        out_base = workspace["root"] / "report"
        r = runner.invoke(main, ["evaluate",
                                 "--generated", str(workspace["data"]),
                                 "--reference", str(workspace["data"]),
                                 "--out", str(out_base), "--name", "self"])
        assert r.exit_code == 0, r.output
        report = json.loads(out_base.with_suffix(".json").read_text())
        assert "self" in report
        # self-comparison: the Frechet metrics collapse to ~0
        assert report["self"]["fpd"] == pytest.approx(0.0, abs=1e-6)
        assert report["self"]["fdd"] == pytest.approx(0.0, abs=1e-6)
        assert "foot_slide" in report["self"]
        assert "beat_align" in report["self"]   # wavs exist in the dataset dir


class TestTopLevel:
    def test_help(self, runner):
        r = runner.invoke(main, ["--help"])
        assert r.exit_code == 0
        for cmd in ("preprocess", "train", "generate", "evaluate", "stream"):
            assert cmd in r.output

    def test_bad_config_path(self, runner):
        r = runner.invoke(main, ["--config", "/nonexistent.cfg", "preprocess",
                                 "--out", "/tmp/x"])
        assert r.exit_code != 0
