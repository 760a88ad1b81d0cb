"""Evaluation metrics against closed-form and Monte Carlo oracles."""
import json

import numpy as np
import pytest

from duomotion import metrics, rotation
from duomotion.metrics import (
    GaussianSummary,
    beat_align,
    diversity,
    dynamism,
    fdd,
    foot_slide,
    fpd,
    gaussian_frechet,
    interaction_features,
    kinematic_beats,
    local_pose_features,
    read_report,
    write_report,
)
from duomotion.motion import PlanarTransform, TwoPersonClip, transform_clip

from test_kinematics import t_pose_clip
from test_motion import random_clip


def summary(mean, cov, count=100):
    return GaussianSummary(np.atleast_1d(mean).astype(float),
                           np.atleast_2d(cov).astype(float), count)


class TestGaussianFrechet:
    def test_1d_closed_form(self):
        # [PAPER]-style oracle: N(0,1) vs N(1,1) -> squared distance 1.0 exact
        assert gaussian_frechet(summary(0.0, 1.0), summary(1.0, 1.0)) == pytest.approx(1.0, abs=1e-12)

    def test_self_distance_zero(self):
        rng = np.random.default_rng(0)
        a = rng.normal(size=(500, 4))
        s = GaussianSummary.fit(a)
        assert gaussian_frechet(s, s) == pytest.approx(0.0, abs=1e-9)

    def test_5d_closed_form(self):
        # [DERIVED] closed form: |m1-m2|^2 + tr(C1 + C2 - 2 (C1^1/2 C2 C1^1/2)^1/2)
        rng = np.random.default_rng(1)
        m1, m2 = rng.normal(size=5), rng.normal(size=5)
        q1 = rng.normal(size=(5, 5))
        q2 = rng.normal(size=(5, 5))
        c1, c2 = q1 @ q1.T + np.eye(5), q2 @ q2.T + np.eye(5)
        from scipy.linalg import sqrtm

        s1 = np.real(sqrtm(c1))
        cross = np.real(sqrtm(s1 @ c2 @ s1))
        expected = float(np.sum((m1 - m2) ** 2) + np.trace(c1 + c2 - 2 * cross))
        got = gaussian_frechet(summary(m1, c1), summary(m2, c2))
        assert got == pytest.approx(expected, rel=1e-10)

    def test_5d_monte_carlo_w2(self):
        # [DERIVED] Monte Carlo oracle: empirical Gaussian fits of two large
        # samples must match the closed-form W2^2 of the true distributions
        # within 5%
        rng = np.random.default_rng(2)
        m1, m2 = np.zeros(5), np.full(5, 0.8)
        q = rng.normal(size=(5, 5))
        c1 = q @ q.T / 5 + np.eye(5)
        c2 = 1.5 * np.eye(5)
        x1 = rng.multivariate_normal(m1, c1, size=200_000)
        x2 = rng.multivariate_normal(m2, c2, size=200_000)
        got = gaussian_frechet(GaussianSummary.fit(x1), GaussianSummary.fit(x2))
        want = gaussian_frechet(summary(m1, c1), summary(m2, c2))
        assert abs(got - want) / want < 0.05

    def test_never_negative(self):
        rng = np.random.default_rng(3)
        for _ in range(10):
            a = rng.normal(size=(50, 3))
            b = a + rng.normal(scale=1e-8, size=a.shape)
            d = gaussian_frechet(GaussianSummary.fit(a), GaussianSummary.fit(b))
            assert d >= 0.0


class TestPoseDistribution:
    def test_fpd_self_zero(self, skel):
        clips = [random_clip(skel, 30, seed=i) for i in range(4)]
        feats = np.concatenate([local_pose_features(c, skel) for c in clips])
        assert fpd(feats, feats) == pytest.approx(0.0, abs=1e-8)

    def test_fpd_constant_offset(self, skel):
        # feature shift by +1 in every dim -> squared Frechet == dim
        clips = [random_clip(skel, 40, seed=i) for i in range(3)]
        feats = np.concatenate([local_pose_features(c, skel) for c in clips])
        assert fpd(feats + 1.0, feats) == pytest.approx(feats.shape[1], rel=1e-6)

    def test_local_features_rigid_invariant(self, skel):
        # [DERIVED] a rigid planar transform must not change the features
        clip = random_clip(skel, 25, seed=5)
        xf = PlanarTransform(offset=np.array([4.0, -2.0]), heading=1.1)
        f0 = local_pose_features(clip, skel)
        f1 = local_pose_features(transform_clip(clip, xf), skel)
        assert np.abs(f0 - f1).max() < 1e-6


class TestInteractionDistribution:
    def test_fdd_rigid_invariant(self, skel):
        pairs = [
            TwoPersonClip(random_clip(skel, 20, seed=i), random_clip(skel, 20, seed=i + 50))
            for i in range(3)
        ]
        xf = PlanarTransform(offset=np.array([2.0, 3.0]), heading=-0.7)
        moved = [
            TwoPersonClip(transform_clip(p.clip_a, xf), transform_clip(p.clip_b, xf))
            for p in pairs
        ]
        assert fdd(moved, pairs, skel) == pytest.approx(0.0, abs=1e-6)

    def test_interaction_features_shape(self, skel):
        pair = TwoPersonClip(random_clip(skel, 12, seed=0), random_clip(skel, 12, seed=1))
        f = interaction_features(pair, skel)
        assert f.shape == (12, skel.joint_count ** 2)
        assert np.all(f >= 0)


class TestBeatAlign:
    def test_kernel_case(self):
        # [PAPER]-style kernel: one kinematic beat exactly sigma away from the
        # only audio beat scores exp(-0.5)
        got = beat_align(np.array([0.5 + metrics.BEAT_SIGMA_S]), np.array([0.5]))
        assert got == pytest.approx(np.exp(-0.5), abs=1e-6)

    def test_perfect_alignment(self):
        t = np.arange(1, 5) * 0.5
        assert beat_align(t, t) == pytest.approx(1.0, abs=1e-12)

    def test_no_kinematic_beats(self):
        assert beat_align(np.array([]), np.array([0.5])) == 0.0

    def test_kinematic_beats_of_oscillation(self, skel):
        # torso swings at 1 Hz -> speed minima at the turning points, 2 per cycle
        fps, n = 30.0, 121
        clip = t_pose_clip(skel, frames=n, root=[0.0, skel.rest_height(0), 0.0])
        arm = skel.names.index("Spine")
        t = np.arange(n) / fps
        ang = 0.8 * np.sin(2 * np.pi * 1.0 * t)
        for f in range(n):
            clip.rotations[f, arm] = rotation.matrix_to_rot6d(
                rotation.axis_angle_matrix(np.array([0.0, 0.0, 1.0]), ang[f])
            )
        beats = kinematic_beats(clip, skel)
        # turning points at t = 0.25, 0.75, 1.25, ... (plus possible edges)
        expected = np.arange(0.25, t[-1], 0.5)
        interior = [b for b in beats if 0.1 < b < t[-1] - 0.1]
        assert len(interior) == len(expected)
        assert np.abs(np.asarray(interior) - expected).max() < 2.5 / fps


class TestDiversity:
    def test_identical_zero(self, skel):
        arr = random_clip(skel, 10, seed=0).to_pose_array()
        assert diversity([arr, arr.copy(), arr.copy()]) == pytest.approx(0.0, abs=1e-12)

    def test_constant_offset_exact(self, skel):
        # every element shifted by +1 -> mean |diff| exactly 1
        arr = random_clip(skel, 10, seed=1).to_pose_array()
        assert diversity([arr, arr + 1.0]) == pytest.approx(1.0, abs=1e-12)

    def test_three_way_mean(self):
        # [TRIVIAL] pairwise mean-|diff| of scalars {0, 1, 3} are 1, 3, 2 -> mean 2
        arrs = [np.full((2, 2), v) for v in (0.0, 1.0, 3.0)]
        assert diversity(arrs) == pytest.approx(2.0, abs=1e-12)

    def test_rejects_singletons_and_shape_mismatch(self):
        with pytest.raises(ValueError):
            diversity([np.zeros((2, 2))])
        with pytest.raises(ValueError):
            diversity([np.zeros((2, 2)), np.zeros((3, 2))])


class TestFootSlide:
    def test_static_zero(self, skel):
        clip = t_pose_clip(skel, frames=20, root=[0.0, skel.rest_height(0), 0.0])
        assert foot_slide(clip, skel) == 0.0

    def test_dragged_planted_feet(self, skel):
        # [DERIVED] oracle: feet planted on the ground dragged 1 cm/frame must
        # register exactly that drag
        clip = t_pose_clip(skel, frames=21, root=[0.0, skel.rest_height(0), 0.0])
        clip.root_displacement[1:, 0] = 0.01
        got = foot_slide(clip, skel)
        assert got == pytest.approx(0.01, abs=1e-12)

    def test_airborne_feet_ignored(self, skel):
        clip = t_pose_clip(skel, frames=21, root=[0.0, skel.rest_height(0) + 1.0, 0.0])
        clip.root_displacement[1:, 0] = 0.05
        assert foot_slide(clip, skel) == 0.0


class TestDynamism:
    def test_static(self, skel):
        clip = t_pose_clip(skel, frames=31, root=[0.0, 0.9, 0.0])
        assert dynamism(clip) == 0.0

    def test_straight_walk(self, skel):
        # 1 m over 30 frames at 30 fps -> 1 m/s
        clip = t_pose_clip(skel, frames=31, root=[0.0, 0.9, 0.0])
        clip.root_displacement[1:, 2] = 1.0 / 30
        assert dynamism(clip) == pytest.approx(1.0, rel=1e-9)

    def test_vertical_motion_ignored(self, skel):
        clip = t_pose_clip(skel, frames=31, root=[0.0, 0.9, 0.0])
        clip.root_displacement[1:, 1] = 0.1
        assert dynamism(clip) == 0.0


class TestReport:
    def test_roundtrip(self, tmp_path):
        rows = {
            "modelA": {"fpd": 1.25, "fdd": 0.5, "beat_align": 0.61,
                       "diversity": 1.1, "foot_slide": 0.004, "dynamism": 0.8},
            "reference": {"fpd": 0.0, "beat_align": 0.7},
        }
        base = tmp_path / "report"
        write_report(rows, base)
        back = read_report(base)
        assert back == json.loads((tmp_path / "report.json").read_text())
        assert back["modelA"]["fpd"] == pytest.approx(1.25)
        lines = (tmp_path / "report.txt").read_text().strip().splitlines()
        assert lines[0].split("\t")[0] == "method"
        assert len(lines) == 3
        # missing metrics render as '-'
        ref_cells = dict(zip(lines[0].split("\t")[1:], lines[2].split("\t")[1:]))
        assert ref_cells["fdd"] == "-"
