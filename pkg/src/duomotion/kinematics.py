"""Forward kinematics, differentiable with respect to rotations and root
displacement (torch autograd), with a numpy front-end for data pipelines."""
from __future__ import annotations

import numpy as np
import torch

from .motion import MotionClip
from .skeleton import SkeletonDef


def rot6d_to_matrix_torch(r: torch.Tensor) -> torch.Tensor:
    """Gram-Schmidt decode, (..., 6) -> (..., 3, 3). Torch twin of the numpy
    decoder; no degeneracy guard so autograd stays clean (training inputs are
    regressed toward valid encodings)."""
    a, b = r[..., 0:3], r[..., 3:6]
    x = torch.nn.functional.normalize(a, dim=-1, eps=1e-8)
    y = torch.nn.functional.normalize(b - (x * b).sum(-1, keepdim=True) * x, dim=-1, eps=1e-8)
    z = torch.cross(x, y, dim=-1)
    return torch.stack([x, y, z], dim=-1)


def forward_kinematics_torch(
    rotations: torch.Tensor,
    root_displacement: torch.Tensor,
    skel: SkeletonDef,
) -> torch.Tensor:
    """World joint positions [..., N, J, 3] from [..., N, J, 6] rotations and
    [..., N, 3] root world deltas. Root world path = rest offset + cumsum."""
    if rotations.shape[-2] != skel.joint_count:
        raise ValueError(
            f"clip has {rotations.shape[-2]} joints, skeleton has {skel.joint_count}"
        )
    mats = rot6d_to_matrix_torch(rotations)                       # [..., N, J, 3, 3]
    offsets = torch.as_tensor(skel.offsets, dtype=rotations.dtype, device=rotations.device)

    # row 0 of the displacement is the absolute root position (MotionClip
    # convention), so the cumulative sum is already a world path
    root_pos = torch.cumsum(root_displacement, dim=-2)
    world_rot: list[torch.Tensor] = [mats[..., 0, :, :]]
    world_pos: list[torch.Tensor] = [root_pos]
    for j in range(1, skel.joint_count):
        p = skel.parents[j]
        pos = world_pos[p] + (world_rot[p] @ offsets[j].unsqueeze(-1)).squeeze(-1)
        world_pos.append(pos)
        world_rot.append(world_rot[p] @ mats[..., j, :, :])
    return torch.stack(world_pos, dim=-2)


def forward_kinematics(clip: MotionClip, skel: SkeletonDef) -> np.ndarray:
    """Numpy convenience wrapper: [N, J, 3] world joint positions."""
    rot = torch.as_tensor(clip.rotations, dtype=torch.float64)
    disp = torch.as_tensor(clip.root_displacement, dtype=torch.float64)
    return forward_kinematics_torch(rot, disp, skel).numpy()
