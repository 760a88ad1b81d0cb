"""Denoiser conditioning: masking invariance, mask-rate statistics, shapes."""
import numpy as np
import pytest
import torch

from duomotion.denoiser import (
    SEM_EMBED_DIM,
    TINY_CONFIG,
    TRAJ_FEAT_DIM,
    ConditionSet,
    DenoiserConfig,
    MotionDenoiser,
    TrajectoryConditionSet,
    TrajectoryDenoiser,
)
from duomotion.training import TrainingWindow, mask_conditions


def make_conditions(skel, batch=2, past=10, window=45, seed=0, **flags):
    g = torch.Generator().manual_seed(seed)
    w = skel.pose_width

    def r(*shape):
        return torch.randn(*shape, generator=g)

    return ConditionSet(
        past_self=r(batch, past, w),
        trajectory=r(batch, window, TRAJ_FEAT_DIM),
        speech_mel=torch.rand(batch, window, 27, generator=g),
        speech_rhythm=torch.rand(batch, window, generator=g),
        speech_sem=torch.randint(0, TINY_CONFIG.codebook_size, (batch, window), generator=g),
        partner_past=r(batch, past, w),
        partner_mel=torch.rand(batch, window, 27, generator=g),
        partner_rhythm=torch.rand(batch, window, generator=g),
        partner_sem=torch.randint(0, TINY_CONFIG.codebook_size, (batch, window), generator=g),
        **flags,
    )


@pytest.fixture()
def model(skel):
    torch.manual_seed(0)
    return MotionDenoiser(skel, TINY_CONFIG, window=45, past=10).eval()


class TestMaskingInvariance:
    def _out(self, model, c, seed=1):
        g = torch.Generator().manual_seed(seed)
        x_t = torch.randn(2, model.future, model.pose_width, generator=g)
        t = torch.tensor([3, 5])
        with torch.no_grad():
            return model(x_t, t, c)

    def test_partner_mask_blocks_perturbation_exactly(self, model, skel):
        # [PRIMARY]-style invariant: with the partner masked, arbitrarily large
        # perturbations of every partner tensor change the output by exactly 0
        base = make_conditions(skel, mask_partner=True)
        out0 = self._out(model, base)
        pert = make_conditions(skel, mask_partner=True)
        pert.partner_past = pert.partner_past + 1e6
        pert.partner_mel = torch.rand_like(pert.partner_mel) * 50.0
        pert.partner_rhythm = pert.partner_rhythm - 7.0
        pert.partner_sem = (pert.partner_sem + 13) % TINY_CONFIG.codebook_size
        out1 = self._out(model, pert)
        assert torch.equal(out0, out1)

    def test_unmasked_partner_does_matter(self, model, skel):
        base = make_conditions(skel)
        out0 = self._out(model, base)
        pert = make_conditions(skel)
        pert.partner_past = pert.partner_past + 1.0
        out1 = self._out(model, pert)
        assert not torch.equal(out0, out1)

    def test_speech_mask_blocks_speech(self, model, skel):
        base = make_conditions(skel, mask_speech=True)
        out0 = self._out(model, base)
        pert = make_conditions(skel, mask_speech=True)
        pert.speech_mel = pert.speech_mel + 5.0
        pert.speech_rhythm = pert.speech_rhythm * 0.0
        pert.speech_sem = torch.zeros_like(pert.speech_sem)
        assert torch.equal(out0, self._out(model, pert))

    def test_trajectory_mask_blocks_trajectory(self, model, skel):
        base = make_conditions(skel, mask_trajectory=True)
        out0 = self._out(model, base)
        pert = make_conditions(skel, mask_trajectory=True)
        pert.trajectory = pert.trajectory * -1000.0
        assert torch.equal(out0, self._out(model, pert))

    def test_masked_partner_no_gradient_into_payload(self, model, skel):
        c = make_conditions(skel, mask_partner=True)
        c.partner_past = c.partner_past.requires_grad_(True)
        c.partner_mel = c.partner_mel.requires_grad_(True)
        x_t = torch.randn(2, model.future, model.pose_width)
        out = model(x_t, torch.tensor([1, 2]), c)
        out.sum().backward()
        assert c.partner_past.grad is None
        assert c.partner_mel.grad is None

    def test_trajectory_targets_mask(self):
        torch.manual_seed(0)
        tmodel = TrajectoryDenoiser(TINY_CONFIG, window=45).eval()
        g = torch.Generator().manual_seed(2)

        def cset(targets):
            return TrajectoryConditionSet(
                initial_state=torch.zeros(1, 2, TRAJ_FEAT_DIM),
                speech_mel=torch.rand(1, 2, 45, 27, generator=g).mul(0).add(0.3),
                speech_sem=torch.zeros(1, 2, 45, dtype=torch.long),
                activity=torch.tensor([4.0]),
                targets=targets,
                mask_targets=True,
            )

        x_t = torch.randn(1, 45, 2, TRAJ_FEAT_DIM, generator=g)
        t = torch.tensor([2])
        with torch.no_grad():
            a = tmodel(x_t, t, cset(torch.zeros(1, 2, 2)))
            b = tmodel(x_t, t, cset(torch.full((1, 2, 2), 99.0)))
        assert torch.equal(a, b)


class TestMaskRate:
    def test_empirical_rate(self, skel):
        # [PRIMARY]-style statistic: over 1e5 draws at p=0.15 the empirical
        # partner-mask rate lands within +-0.01 (sigma ~= 0.0011)
        rng = np.random.default_rng(7)
        n = 100_000
        hits = sum(bool(rng.random() < 0.15) for _ in range(n))
        assert abs(hits / n - 0.15) < 0.01

    def test_mask_conditions_rate_and_flag(self, skel):
        w = TrainingWindow.__new__(TrainingWindow)  # masking only touches .masked
        rng = np.random.default_rng(3)
        hits = 0
        n = 100_000
        for _ in range(n):
            w.masked = False
            mask_conditions(w, p_mask=0.15, rng=rng)
            hits += w.masked
        assert abs(hits / n - 0.15) < 0.01

    def test_rate_zero_and_one(self):
        w = TrainingWindow.__new__(TrainingWindow)
        rng = np.random.default_rng(0)
        w.masked = True
        mask_conditions(w, p_mask=0.0, rng=rng)
        assert w.masked is False
        mask_conditions(w, p_mask=1.0, rng=rng)
        assert w.masked is True


class TestShapesAndConfig:
    def test_output_shape(self, model, skel):
        c = make_conditions(skel, batch=3)
        x_t = torch.randn(3, model.future, model.pose_width)
        out = model(x_t, torch.tensor([0, 1, 2]), c)
        assert out.shape == (3, model.future, model.pose_width)

    def test_rejects_bad_window(self, model, skel):
        c = make_conditions(skel)
        with pytest.raises(ValueError, match="expected noisy window"):
            model(torch.randn(2, 12, model.pose_width), torch.tensor([0, 0]), c)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            DenoiserConfig(hidden=0)
        with pytest.raises(ValueError):
            DenoiserConfig(hidden=30, heads=4)

    def test_config_roundtrip(self):
        d = TINY_CONFIG.to_dict()
        assert DenoiserConfig(**d) == TINY_CONFIG

    def test_activity_range_validated(self):
        with pytest.raises(ValueError, match="activity"):
            TrajectoryConditionSet(
                initial_state=torch.zeros(1, 2, TRAJ_FEAT_DIM),
                speech_mel=torch.zeros(1, 2, 5, 27),
                speech_sem=torch.zeros(1, 2, 5, dtype=torch.long),
                activity=torch.tensor([11.0]),
                targets=torch.zeros(1, 2, 2),
            )

    def test_determinism(self, model, skel):
        c = make_conditions(skel)
        x_t = torch.randn(2, model.future, model.pose_width)
        t = torch.tensor([4, 4])
        with torch.no_grad():
            a = model(x_t, t, c)
            b = model(x_t, t, c)
        assert torch.equal(a, b)
