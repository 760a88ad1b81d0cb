"""Rotation math: 6D two-column encoding, matrices, quaternions, slerp.

The 6D encoding stores the first two columns of a rotation matrix; decoding
runs Gram-Schmidt so any non-degenerate 6-vector maps to a proper rotation.
All functions accept arbitrary leading batch dimensions.
"""
from __future__ import annotations

import numpy as np

IDENTITY_6D = np.array([1.0, 0.0, 0.0, 0.0, 1.0, 0.0])

_EPS = 1e-8


class DegenerateRotationError(ValueError):
    """Raised when a 6-vector cannot be orthonormalized into a rotation."""


def rot6d_to_matrix(r: np.ndarray) -> np.ndarray:
    """Decode (..., 6) two-column features into (..., 3, 3) rotation matrices."""
    r = np.asarray(r, dtype=np.float64)
    if r.shape[-1] != 6:
        raise ValueError(f"expected trailing dim 6, got {r.shape}")
    a = r[..., 0:3]
    b = r[..., 3:6]
    na = np.linalg.norm(a, axis=-1, keepdims=True)
    if np.any(na < _EPS):
        raise DegenerateRotationError("first column has (near-)zero norm")
    x = a / na
    b_proj = b - np.sum(x * b, axis=-1, keepdims=True) * x
    nb = np.linalg.norm(b_proj, axis=-1, keepdims=True)
    if np.any(nb < _EPS):
        raise DegenerateRotationError("columns are (near-)parallel")
    y = b_proj / nb
    z = np.cross(x, y)
    return np.stack([x, y, z], axis=-1)


def matrix_to_rot6d(m: np.ndarray) -> np.ndarray:
    """Encode (..., 3, 3) rotation matrices as (..., 6) column features."""
    m = np.asarray(m, dtype=np.float64)
    if m.shape[-2:] != (3, 3):
        raise ValueError(f"expected trailing shape (3, 3), got {m.shape}")
    if not is_rotation_matrix(m):
        raise ValueError("input is not a proper rotation matrix")
    return np.concatenate([m[..., :, 0], m[..., :, 1]], axis=-1)


def is_rotation_matrix(m: np.ndarray, tol: float = 1e-4) -> bool:
    m = np.asarray(m, dtype=np.float64)
    ident = np.eye(3)
    ortho = np.matmul(np.swapaxes(m, -1, -2), m)
    if not np.allclose(ortho, ident, atol=tol):
        return False
    return bool(np.all(np.linalg.det(m) > 0))


def yaw_matrix(angle: float | np.ndarray) -> np.ndarray:
    """Rotation about the vertical (+y) axis; y-up world convention."""
    angle = np.asarray(angle, dtype=np.float64)
    c, s = np.cos(angle), np.sin(angle)
    zero = np.zeros_like(c)
    one = np.ones_like(c)
    rows = [
        np.stack([c, zero, s], axis=-1),
        np.stack([zero, one, zero], axis=-1),
        np.stack([-s, zero, c], axis=-1),
    ]
    return np.stack(rows, axis=-2)


def matrix_yaw(m: np.ndarray) -> np.ndarray:
    """Heading angle of the rotated forward axis (+z), projected on the ground."""
    m = np.asarray(m, dtype=np.float64)
    fwd = m[..., :, 2]
    return np.arctan2(fwd[..., 0], fwd[..., 2])


def matrix_to_quat(m: np.ndarray) -> np.ndarray:
    """(..., 3, 3) -> unit quaternion (w, x, y, z)."""
    m = np.asarray(m, dtype=np.float64)
    t = np.trace(m, axis1=-2, axis2=-1)
    q = np.empty(m.shape[:-2] + (4,), dtype=np.float64)
    # Shepperd's method, branch on the largest diagonal term for stability.
    flat = m.reshape(-1, 3, 3)
    out = q.reshape(-1, 4)
    for i, r in enumerate(flat):
        tr = np.trace(r)
        if tr > 0:
            s = np.sqrt(tr + 1.0) * 2
            out[i] = [0.25 * s, (r[2, 1] - r[1, 2]) / s, (r[0, 2] - r[2, 0]) / s, (r[1, 0] - r[0, 1]) / s]
        elif r[0, 0] >= r[1, 1] and r[0, 0] >= r[2, 2]:
            s = np.sqrt(1.0 + r[0, 0] - r[1, 1] - r[2, 2]) * 2
            out[i] = [(r[2, 1] - r[1, 2]) / s, 0.25 * s, (r[0, 1] + r[1, 0]) / s, (r[0, 2] + r[2, 0]) / s]
        elif r[1, 1] >= r[2, 2]:
            s = np.sqrt(1.0 + r[1, 1] - r[0, 0] - r[2, 2]) * 2
            out[i] = [(r[0, 2] - r[2, 0]) / s, (r[0, 1] + r[1, 0]) / s, 0.25 * s, (r[1, 2] + r[2, 1]) / s]
        else:
            s = np.sqrt(1.0 + r[2, 2] - r[0, 0] - r[1, 1]) * 2
            out[i] = [(r[1, 0] - r[0, 1]) / s, (r[0, 2] + r[2, 0]) / s, (r[1, 2] + r[2, 1]) / s, 0.25 * s]
    norm = np.linalg.norm(out, axis=-1, keepdims=True)
    out /= norm
    return q


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    q = q / np.linalg.norm(q, axis=-1, keepdims=True)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    rows = [
        np.stack([1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)], axis=-1),
        np.stack([2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)], axis=-1),
        np.stack([2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)], axis=-1),
    ]
    return np.stack(rows, axis=-2)


def quat_slerp(qa: np.ndarray, qb: np.ndarray, w: float | np.ndarray) -> np.ndarray:
    """Shortest-arc spherical interpolation, w=0 -> qa, w=1 -> qb."""
    qa = np.asarray(qa, dtype=np.float64)
    qb = np.asarray(qb, dtype=np.float64).copy()
    w = np.asarray(w, dtype=np.float64)
    dot = np.sum(qa * qb, axis=-1, keepdims=True)
    qb = np.where(dot < 0, -qb, qb)
    dot = np.abs(dot)
    dot = np.clip(dot, -1.0, 1.0)
    theta = np.arccos(dot)
    sin_theta = np.sin(theta)
    small = sin_theta < 1e-6
    w = w[..., None] if w.ndim < dot.ndim else w
    wa = np.where(small, 1.0 - w, np.sin((1.0 - w) * theta) / np.where(small, 1.0, sin_theta))
    wb = np.where(small, w, np.sin(w * theta) / np.where(small, 1.0, sin_theta))
    out = wa * qa + wb * qb
    return out / np.linalg.norm(out, axis=-1, keepdims=True)


def slerp_rot6d(ra: np.ndarray, rb: np.ndarray, w: float | np.ndarray) -> np.ndarray:
    """Blend two 6D rotation arrays on the manifold."""
    qa = matrix_to_quat(rot6d_to_matrix(ra))
    qb = matrix_to_quat(rot6d_to_matrix(rb))
    blended = quat_to_matrix(quat_slerp(qa, qb, w))
    return np.concatenate([blended[..., :, 0], blended[..., :, 1]], axis=-1)


def axis_angle_matrix(axis: np.ndarray, angle: float) -> np.ndarray:
    """Rodrigues formula; test oracle and Euler-channel building block."""
    axis = np.asarray(axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis)
    x, y, z = axis
    k = np.array([[0, -z, y], [z, 0, -x], [-y, x, 0]])
    return np.eye(3) + np.sin(angle) * k + (1 - np.cos(angle)) * (k @ k)
