"""Forward kinematics against a hand-written per-chain oracle and autograd
gradient checks."""
import numpy as np
import pytest
import torch
from scipy.spatial.transform import Rotation

from duomotion import rotation
from duomotion.kinematics import (
    forward_kinematics,
    forward_kinematics_torch,
    rot6d_to_matrix_torch,
)
from duomotion.motion import MotionClip
from duomotion.skeleton import builtin_skeleton


def t_pose_clip(skel, frames=3, root=None):
    rots = np.tile(rotation.matrix_to_rot6d(np.eye(3)), (frames, skel.joint_count, 1))
    disp = np.zeros((frames, 3))
    if root is not None:
        disp[0] = root
    return MotionClip(30.0, rots, disp, np.ones((frames, 2)))


def chain_oracle(skel, clip):
    """Independent FK: explicit recursion with scipy matrices."""
    n, j = clip.frames, skel.joint_count
    mats = rotation.rot6d_to_matrix(clip.rotations.reshape(-1, 6)).reshape(n, j, 3, 3)
    root = np.cumsum(clip.root_displacement, axis=0)
    pos = np.zeros((n, j, 3))
    glob = np.zeros((n, j, 3, 3))
    for t in range(n):
        for i in range(j):
            p = skel.parents[i]
            if p == -1:
                glob[t, i] = mats[t, i]
                pos[t, i] = root[t]
            else:
                glob[t, i] = glob[t, p] @ mats[t, i]
                pos[t, i] = pos[t, p] + glob[t, p] @ skel.offsets[i]
    return pos


class TestForwardKinematics:
    def test_t_pose_offsets(self, skel):
        # [TRIVIAL] identity rotations: joint = root + summed chain offsets
        clip = t_pose_clip(skel, root=[0.0, 0.0, 0.0])
        pos = forward_kinematics(clip, skel)
        for i in range(skel.joint_count):
            # chain offsets below the root; the root itself sits at the
            # (cumulated) displacement, its rest offset is never applied
            expected, k = np.zeros(3), i
            while k != 0:
                expected = expected + skel.offsets[k]
                k = skel.parents[k]
            assert np.allclose(pos[0, i], expected), skel.names[i]

    def test_against_chain_oracle(self, skel, rng):
        # [DERIVED] random rotations vs the explicit recursion above
        n, j = 8, skel.joint_count
        mats = Rotation.random(n * j, random_state=np.random.RandomState(0)).as_matrix()
        rots = rotation.matrix_to_rot6d(mats).reshape(n, j, 6)
        disp = rng.normal(scale=0.1, size=(n, 3))
        clip = MotionClip(30.0, rots, disp, np.ones((n, 2)))
        got = forward_kinematics(clip, skel)
        want = chain_oracle(skel, clip)
        assert np.abs(got - want).max() < 1e-6

    def test_root_displacement_is_cumulative(self, skel):
        clip = t_pose_clip(skel, frames=4)
        clip.root_displacement[:] = [[1.0, 0, 0], [0.5, 0, 0], [0.5, 0, 0], [0, 0, 1.0]]
        pos = forward_kinematics(clip, skel)
        assert np.allclose(pos[:, 0], [[1, 0, 0], [1.5, 0, 0], [2, 0, 0], [2, 0, 1]])

    def test_rest_feet_on_reference(self, skel):
        # tiny9 rest pose has feet 0.05 m above the ground
        clip = t_pose_clip(skel, root=[0.0, skel.rest_height(0), 0.0])
        pos = forward_kinematics(clip, skel)
        for f in skel.foot_indices:
            assert pos[0, f, 1] == pytest.approx(0.05, abs=1e-12)

    def test_torch_matches_numpy(self, skel, rng):
        n, j = 5, skel.joint_count
        mats = Rotation.random(n * j, random_state=np.random.RandomState(2)).as_matrix()
        rots = rotation.matrix_to_rot6d(mats).reshape(n, j, 6)
        disp = rng.normal(scale=0.1, size=(n, 3))
        clip = MotionClip(30.0, rots, disp, np.ones((n, 2)))
        got = forward_kinematics_torch(
            torch.as_tensor(rots), torch.as_tensor(disp), skel
        ).numpy()
        want = forward_kinematics(clip, skel)
        assert np.abs(got - want).max() < 1e-9


def random_fk_inputs(skel, n, seed=0, requires_grad=True):
    torch.manual_seed(seed)
    rots = torch.randn(n, skel.joint_count, 6, dtype=torch.float64) * 0.3
    rots[..., :] += torch.tensor([1.0, 0, 0, 0, 1.0, 0], dtype=torch.float64)
    disp = torch.randn(n, 3, dtype=torch.float64) * 0.2
    rots.requires_grad_(requires_grad)
    disp.requires_grad_(requires_grad)
    return rots, disp


class TestGradients:
    def test_fk_gradcheck(self, skel):
        # [DERIVED] autograd vs finite differences on the full FK map
        rots, disp = random_fk_inputs(skel, 2, seed=0)
        assert torch.autograd.gradcheck(
            lambda r, d: forward_kinematics_torch(r, d, skel),
            (rots, disp),
            eps=1e-6,
            atol=1e-5,
        )

    def test_manual_finite_difference(self, skel):
        # relative error of analytic grad vs central differences < 1e-4
        rots, disp = random_fk_inputs(skel, 3, seed=1)
        w = torch.randn(3, skel.joint_count, 3, dtype=torch.float64)
        loss = (forward_kinematics_torch(rots, disp, skel) * w).sum()
        loss.backward()
        grad = rots.grad.clone()
        eps = 1e-6
        rng = np.random.default_rng(0)
        flat = rots.detach().clone()
        for _ in range(20):
            t = int(rng.integers(0, 3))
            j = int(rng.integers(0, skel.joint_count))
            k = int(rng.integers(0, 6))
            with torch.no_grad():
                pp = flat.clone()
                pp[t, j, k] += eps
                pm = flat.clone()
                pm[t, j, k] -= eps
                fd = (
                    (forward_kinematics_torch(pp, disp.detach(), skel) * w).sum()
                    - (forward_kinematics_torch(pm, disp.detach(), skel) * w).sum()
                ).item() / (2 * eps)
            g = grad[t, j, k].item()
            if abs(fd) < 1e-8 and abs(g) < 1e-8:
                continue
            assert abs(g - fd) / max(abs(fd), abs(g)) < 1e-4


def test_rot6d_torch_matches_numpy(rng):
    r6 = rng.normal(size=(10, 6))
    got = rot6d_to_matrix_torch(torch.as_tensor(r6)).numpy()
    want = rotation.rot6d_to_matrix(r6)
    assert np.abs(got - want).max() < 1e-12


def test_side_skeleton_available():
    # the larger builtin skeleton also satisfies the FK oracle
    sk = builtin_skeleton("tiny9")
    assert sk.joint_count == 9
    assert sk.pose_width == 9 * 6 + 5
